//! Attention-weighted kernel assembly for omni-dimensional dynamic convolution.
//!
//! For candidate kernels `W[n, Cout, Cin, K, K]` and per-sample attentions over
//! kernels (`B×n`), output filters (`B×Cout`), input channels (`B×Cin`) and
//! kernel positions (`B×K×K`), produces per-sample kernels
//! `out[b,o,i,p,q] = Σ_k aw[b,k]·af[b,o]·ac[b,i]·as[b,p,q]·W[k,o,i,p,q]`.

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

struct Dims {
    batch: usize,
    n: usize,
    cout: usize,
    cin: usize,
    taps: usize,
}

impl Dims {
    fn per_kernel(&self) -> usize {
        self.cout * self.cin * self.taps
    }
}

fn dims<T: Real>(tape: &Tape<T>, weights: Var, kernel_attn: Var, filter_attn: Var, channel_attn: Var, spatial_attn: Var) -> Result<Dims> {
    let &[n, cout, cin, kh, kw] = tape.shape(weights) else {
        return Err(shape_err("dynamic_kernel", format!("weights must be n×Cout×Cin×K×K, got {:?}", tape.shape(weights))));
    };
    let batch = tape.shape(kernel_attn)[0];
    let expect = [
        ("kernel attention", kernel_attn, vec![batch, n]),
        ("filter attention", filter_attn, vec![batch, cout]),
        ("channel attention", channel_attn, vec![batch, cin]),
        ("spatial attention", spatial_attn, vec![batch, kh, kw]),
    ];
    for (name, v, shape) in expect {
        if tape.shape(v) != shape.as_slice() {
            return Err(shape_err("dynamic_kernel", format!("{name} must be {shape:?}, got {:?}", tape.shape(v))));
        }
    }
    Ok(Dims { batch, n, cout, cin, taps: kh * kw })
}

impl<T: Real> Tape<T> {
    pub fn dynamic_kernel(&mut self, weights: Var, kernel_attn: Var, filter_attn: Var, channel_attn: Var, spatial_attn: Var) -> Result<Var> {
        for v in [weights, kernel_attn, filter_attn, channel_attn, spatial_attn] {
            self.check_var(v)?;
        }
        let d = dims(self, weights, kernel_attn, filter_attn, channel_attn, spatial_attn)?;
        let w = self.value(weights).data();
        let aw = self.value(kernel_attn).data();
        let af = self.value(filter_attn).data();
        let ac = self.value(channel_attn).data();
        let asp = self.value(spatial_attn).data();
        let per = d.per_kernel();
        let mut mixed = vec![T::zero(); d.batch * per];
        for b in 0..d.batch {
            let dst = &mut mixed[b * per..(b + 1) * per];
            for k in 0..d.n {
                let a = aw[b * d.n + k];
                for (m, &wv) in dst.iter_mut().zip(&w[k * per..(k + 1) * per]) {
                    *m += a * wv;
                }
            }
        }
        let mut out = vec![T::zero(); d.batch * per];
        for b in 0..d.batch {
            for o in 0..d.cout {
                for i in 0..d.cin {
                    let scale = af[b * d.cout + o] * ac[b * d.cin + i];
                    let base = b * per + (o * d.cin + i) * d.taps;
                    for s in 0..d.taps {
                        out[base + s] = scale * asp[b * d.taps + s] * mixed[base + s];
                    }
                }
            }
        }
        let mut shape = vec![d.batch];
        shape.extend_from_slice(&self.shape(weights)[1..]);
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::DynamicKernel { weights, kernel_attn, filter_attn, channel_attn, spatial_attn, mixed })
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    weights: Var,
    kernel_attn: Var,
    filter_attn: Var,
    channel_attn: Var,
    spatial_attn: Var,
    mixed: &[T],
    g: &[T],
) -> Vec<(Var, Vec<T>)> {
    let d = dims(tape, weights, kernel_attn, filter_attn, channel_attn, spatial_attn).expect("validated in forward");
    let w = tape.value(weights).data();
    let aw = tape.value(kernel_attn).data();
    let af = tape.value(filter_attn).data();
    let ac = tape.value(channel_attn).data();
    let asp = tape.value(spatial_attn).data();
    let per = d.per_kernel();

    let mut dmixed = vec![T::zero(); d.batch * per];
    let mut daf = vec![T::zero(); d.batch * d.cout];
    let mut dac = vec![T::zero(); d.batch * d.cin];
    let mut das = vec![T::zero(); d.batch * d.taps];
    for b in 0..d.batch {
        for o in 0..d.cout {
            let fo = af[b * d.cout + o];
            for i in 0..d.cin {
                let ci = ac[b * d.cin + i];
                let base = b * per + (o * d.cin + i) * d.taps;
                for s in 0..d.taps {
                    let sp = asp[b * d.taps + s];
                    let gv = g[base + s];
                    let m = mixed[base + s];
                    dmixed[base + s] = gv * fo * ci * sp;
                    daf[b * d.cout + o] += gv * ci * sp * m;
                    dac[b * d.cin + i] += gv * fo * sp * m;
                    das[b * d.taps + s] += gv * fo * ci * m;
                }
            }
        }
    }
    let mut dw = vec![T::zero(); d.n * per];
    let mut daw = vec![T::zero(); d.batch * d.n];
    for b in 0..d.batch {
        let dm = &dmixed[b * per..(b + 1) * per];
        for k in 0..d.n {
            let a = aw[b * d.n + k];
            let wk = &w[k * per..(k + 1) * per];
            let mut dot = T::zero();
            for ((dwv, &wv), &dmv) in dw[k * per..(k + 1) * per].iter_mut().zip(wk).zip(dm) {
                *dwv += a * dmv;
                dot += dmv * wv;
            }
            daw[b * d.n + k] = dot;
        }
    }
    vec![(weights, dw), (kernel_attn, daw), (filter_attn, daf), (channel_attn, dac), (spatial_attn, das)]
}
