use crate::error::{config_err, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeKind {
    /// `align_corners = false`: sample centers map as `(i + 0.5)·scale − 0.5`.
    Bilinear,
    /// Nearest source pixel of the same center mapping, `floor((i + 0.5)·scale)`.
    Nearest,
}

/// Up to two source taps and weights along one axis for output index `i`.
fn taps(i: usize, input: usize, output: usize, kind: ResizeKind) -> [(usize, f64); 2] {
    let scale = input as f64 / output as f64;
    match kind {
        ResizeKind::Bilinear => {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            [(lo, 1.0 - frac), (hi, frac)]
        }
        ResizeKind::Nearest => {
            let src = (((i as f64 + 0.5) * scale).floor() as usize).min(input - 1);
            [(src, 1.0), (src, 0.0)]
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn resize(&mut self, input: Var, out_h: usize, out_w: usize, kind: ResizeKind) -> Result<Var> {
        self.check_var(input)?;
        if out_h == 0 || out_w == 0 {
            return Err(config_err("resize", "output extents must be >= 1"));
        }
        let (b, c, h, w) = self.value(input).dims4()?;
        if (h, w) == (out_h, out_w) {
            let value = self.value(input).clone();
            return self.push(value, Op::Resize { input, kind });
        }
        let x = self.value(input).data();
        let ys: Vec<_> = (0..out_h).map(|i| taps(i, h, out_h, kind)).collect();
        let xs: Vec<_> = (0..out_w).map(|i| taps(i, w, out_w, kind)).collect();
        let mut out = vec![T::zero(); b * c * out_h * out_w];
        for p in 0..b * c {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for (oy, ty) in ys.iter().enumerate() {
                for (ox, tx) in xs.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(sy, wy) in ty {
                        for &(sx, wx) in tx {
                            acc += wy * wx * plane[sy * w + sx].as_f64();
                        }
                    }
                    out[(p * out_h + oy) * out_w + ox] = T::lit(acc);
                }
            }
        }
        let value = Tensor::new(vec![b, c, out_h, out_w], out)?;
        self.push(value, Op::Resize { input, kind })
    }
}

pub(crate) fn backward<T: Real>(input: &Tensor<T>, output: &Tensor<T>, kind: ResizeKind, g: &[T]) -> Vec<T> {
    let (b, c, h, w) = input.dims4().expect("validated in forward");
    let (_, _, out_h, out_w) = output.dims4().expect("validated in forward");
    if (h, w) == (out_h, out_w) {
        return g.to_vec();
    }
    let ys: Vec<_> = (0..out_h).map(|i| taps(i, h, out_h, kind)).collect();
    let xs: Vec<_> = (0..out_w).map(|i| taps(i, w, out_w, kind)).collect();
    let mut dx = vec![T::zero(); b * c * h * w];
    for p in 0..b * c {
        for (oy, ty) in ys.iter().enumerate() {
            for (ox, tx) in xs.iter().enumerate() {
                let gv = g[(p * out_h + oy) * out_w + ox];
                for &(sy, wy) in ty {
                    for &(sx, wx) in tx {
                        dx[p * h * w + sy * w + sx] += T::lit(wy * wx) * gv;
                    }
                }
            }
        }
    }
    dx
}
