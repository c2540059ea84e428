//! Central finite-difference verification of tape gradients (64-bit).

mod cases;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use cases::{op_cases, random_tensor, GradCase};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Error denominator floor: `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Coordinates checked per input tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, floor: 1e-3, max_coords: 48, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates where one-sided differences disagree (a kink within ±step).
    pub skipped_nonsmooth: usize,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_err > self.max_rel_err) {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped_nonsmooth += other.skipped_nonsmooth;
    }

    /// Error below `tol` with at most 5% of probed coordinates skipped as kinks.
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol && self.skipped_nonsmooth * 20 <= self.checked + self.skipped_nonsmooth
    }
}

fn pick_coords(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut chosen = sample(rng, n, max).into_vec();
    chosen.sort_unstable();
    chosen
}

/// Compares analytic gradients from `eval` with central differences.
///
/// `eval(inputs, with_grad)` returns the scalar loss and, when asked, one
/// gradient tensor per input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], mut eval: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>], bool) -> Result<(f64, Option<Vec<Tensor<f64>>>)>,
{
    let (f0, grads) = eval(inputs, true)?;
    let grads = grads.expect("eval must return gradients when asked");
    let mut report = GradCheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut probe = inputs.to_vec();
    for (t, input) in inputs.iter().enumerate() {
        for idx in pick_coords(input.numel(), opts.max_coords, &mut rng) {
            let orig = input.data()[idx];
            probe[t].data_mut()[idx] = orig + h;
            let (fp, _) = eval(&probe, false)?;
            probe[t].data_mut()[idx] = orig - h;
            let (fm, _) = eval(&probe, false)?;
            probe[t].data_mut()[idx] = orig;

            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            if (forward - backward).abs() > 1e-4 + 1e-3 * forward.abs().max(backward.abs()) {
                report.skipped_nonsmooth += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads[t].data()[idx];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((t, idx, analytic, numeric));
            }
        }
    }
    Ok(report)
}

/// [`check_gradients`] for a function written directly against a tape:
/// every input becomes a grad-requiring leaf and `f` returns the scalar loss.
pub fn check_tape_fn<F>(inputs: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_gradients(
        inputs,
        |xs, with_grad| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
            let loss = f(&mut tape, &vars)?;
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            if !with_grad {
                return Ok((value, None));
            }
            tape.backward(loss)?;
            let grads = vars
                .iter()
                .zip(xs)
                .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
                .collect();
            Ok((value, Some(grads)))
        },
        opts,
    )
}

/// `Σ out ⊙ weights` with fixed pseudo-random weights in `[-1, 1)`; a
/// projection that exercises every output element, unlike a plain mean.
pub fn random_projection(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, weights)?);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_f64(vec![3], &[0.3, -0.7, 1.1]).unwrap();
        let good = check_gradients(
            std::slice::from_ref(&x),
            |xs, _| {
                let v: f64 = xs[0].data().iter().map(|a| a * a * a).sum();
                let g = xs[0].map(|a| 3.0 * a * a);
                Ok((v, Some(vec![g])))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(good.max_rel_err < 1e-6, "{good:?}");
        let bad = check_gradients(
            &[x],
            |xs, _| {
                let v: f64 = xs[0].data().iter().map(|a| a * a * a).sum();
                let g = xs[0].map(|a| 2.0 * a * a);
                Ok((v, Some(vec![g])))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(bad.max_rel_err > 0.1);
    }

    #[test]
    fn subsampling_is_deterministic_and_bounded() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let first = pick_coords(1000, 20, &mut a);
        assert_eq!(first, pick_coords(1000, 20, &mut b));
        assert_eq!(first.len(), 20);
        assert!(first.windows(2).all(|w| w[0] < w[1]));
    }
}
