use crate::error::{config_err, shape_err, Result};
use crate::real::Real;
use crate::tape::{warn_degenerate_batch_norm, Op, Tape, Var};
use crate::tensor::Tensor;

/// Batch-norm statistics handling. Train mode normalizes by the batch and
/// folds the batch statistics into the running buffers.
pub enum BatchNormMode<'a, T> {
    Train { running_mean: &'a mut [T], running_var: &'a mut [T], momentum: T },
    Eval { running_mean: &'a [T], running_var: &'a [T] },
}

/// `(outer, channels, inner)` for a `B×C×…` tensor.
fn split_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err("batch_norm", format!("input must be at least B×C, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Real> Tape<T> {
    /// Per-channel normalization over every axis except axis 1.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, mode: BatchNormMode<'_, T>, eps: T) -> Result<Var> {
        self.check_var(input)?;
        self.check_var(gamma)?;
        self.check_var(beta)?;
        let shape = self.shape(input).to_vec();
        let (outer, channels, inner) = split_dims(&shape)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(shape_err("batch_norm", format!("{name} must be [{channels}], got {:?}", self.shape(v))));
            }
        }
        if eps <= T::zero() {
            return Err(config_err("batch_norm", "eps must be positive"));
        }
        let x = self.value(input).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let count = outer * inner;
        let n = T::lit(count as f64);
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];

        let train = matches!(mode, BatchNormMode::Train { .. });
        match mode {
            BatchNormMode::Train { running_mean, running_var, momentum } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(shape_err("batch_norm", "running statistics length != channels"));
                }
                if count == 1 {
                    warn_degenerate_batch_norm();
                }
                for o in 0..outer {
                    #[allow(clippy::needless_range_loop)]
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        mean[c] += x[base..base + inner].iter().copied().sum::<T>();
                    }
                }
                for m in &mut mean {
                    *m /= n;
                }
                for o in 0..outer {
                    for c in 0..channels {
                        let base = (o * channels + c) * inner;
                        var[c] += x[base..base + inner].iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<T>();
                    }
                }
                for v in &mut var {
                    *v /= n;
                }
                let unbias = if count > 1 { n / T::lit((count - 1) as f64) } else { T::one() };
                for c in 0..channels {
                    running_mean[c] = (T::one() - momentum) * running_mean[c] + momentum * mean[c];
                    running_var[c] = (T::one() - momentum) * running_var[c] + momentum * var[c] * unbias;
                }
            }
            BatchNormMode::Eval { running_mean, running_var } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(shape_err("batch_norm", "running statistics length != channels"));
                }
                mean.copy_from_slice(running_mean);
                var.copy_from_slice(running_var);
            }
        }

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for c in 0..channels {
                let base = (o * channels + c) * inner;
                for i in base..base + inner {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gm[c] * h + bt[c];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::BatchNorm { input, gamma, beta, xhat, inv_std, train })
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let shape = tape.shape(input);
    let (outer, channels, inner) = split_dims(shape).expect("validated in forward");
    let gm = tape.value(gamma).data();
    let n = T::lit((outer * inner) as f64);

    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for o in 0..outer {
        for c in 0..channels {
            let base = (o * channels + c) * inner;
            for i in base..base + inner {
                dgamma[c] += g[i] * xhat[i];
                dbeta[c] += g[i];
            }
        }
    }
    let mut dx = vec![T::zero(); g.len()];
    for o in 0..outer {
        for c in 0..channels {
            let base = (o * channels + c) * inner;
            let scale = gm[c] * inv_std[c];
            for i in base..base + inner {
                dx[i] = if train {
                    // dxhat = g·γ; dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    scale * (g[i] - dbeta[c] / n - xhat[i] * dgamma[c] / n)
                } else {
                    scale * g[i]
                };
            }
        }
    }
    vec![(input, dx), (gamma, dgamma), (beta, dbeta)]
}
