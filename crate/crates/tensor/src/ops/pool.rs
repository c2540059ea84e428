use crate::error::{config_err, shape_err, Result};
use crate::ops::conv::window_output_extent;
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    planes: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl PoolGeom {
    /// Clipped window bounds `(y0, y1, x0, x1)` for output pixel `(oy, ox)`.
    fn window(&self, oy: usize, ox: usize) -> (usize, usize, usize, usize) {
        let y = (oy * self.stride) as isize - self.pad as isize;
        let x = (ox * self.stride) as isize - self.pad as isize;
        let k = self.kernel as isize;
        let clip = |v: isize, hi: usize| v.clamp(0, hi as isize) as usize;
        (clip(y, self.h), clip(y + k, self.h), clip(x, self.w), clip(x + k, self.w))
    }
}

impl<T: Real> Tape<T> {
    /// Square-window pooling over the last two axes of a `B×C×H×W` tensor.
    /// Max pooling treats padding as −∞; average pooling excludes padding
    /// from the divisor.
    pub fn pool2d(&mut self, input: Var, kind: PoolKind, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        self.check_var(input)?;
        let (b, c, h, w) = self.value(input).dims4()?;
        if kernel == 0 || stride == 0 {
            return Err(config_err("pool2d", "kernel and stride must be >= 1"));
        }
        if padding >= kernel {
            return Err(config_err("pool2d", format!("padding {padding} must be smaller than kernel {kernel}")));
        }
        let ho = window_output_extent(h, kernel, stride, padding)
            .ok_or_else(|| config_err("pool2d", format!("kernel {kernel} larger than padded height {}", h + 2 * padding)))?;
        let wo = window_output_extent(w, kernel, stride, padding)
            .ok_or_else(|| config_err("pool2d", format!("kernel {kernel} larger than padded width {}", w + 2 * padding)))?;
        let geom = PoolGeom { planes: b * c, h, w, kernel, stride, pad: padding, ho, wo };
        let x = self.value(input).data();
        let mut out = vec![T::zero(); geom.planes * ho * wo];
        let mut argmax = Vec::new();
        if kind == PoolKind::Max {
            argmax = vec![0usize; out.len()];
        }
        for p in 0..geom.planes {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y0, y1, x0, x1) = geom.window(oy, ox);
                    let o = (p * ho + oy) * wo + ox;
                    match kind {
                        PoolKind::Max => {
                            // strict comparison: the first maximum in scan order wins
                            let mut best = T::neg_infinity();
                            let mut at = usize::MAX;
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    let v = plane[iy * w + ix];
                                    if at == usize::MAX || v > best {
                                        best = v;
                                        at = iy * w + ix;
                                    }
                                }
                            }
                            if at == usize::MAX {
                                return Err(shape_err("pool2d", "window fell entirely inside padding"));
                            }
                            out[o] = best;
                            argmax[o] = p * h * w + at;
                        }
                        PoolKind::Avg => {
                            let mut acc = T::zero();
                            for iy in y0..y1 {
                                acc += plane[iy * w + x0..iy * w + x1].iter().copied().sum::<T>();
                            }
                            out[o] = acc / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, c, ho, wo], out)?;
        match kind {
            PoolKind::Max => self.push(value, Op::MaxPool { input, argmax }),
            PoolKind::Avg => self.push(value, Op::AvgPool { input, geom }),
        }
    }

    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        self.pool2d(input, PoolKind::Max, kernel, stride, padding)
    }

    pub fn avg_pool2d(&mut self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        self.pool2d(input, PoolKind::Avg, kernel, stride, padding)
    }
}

pub(crate) fn max_backward<T: Real>(input_len: usize, argmax: &[usize], g: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&at, &gv) in argmax.iter().zip(g) {
        dx[at] += gv;
    }
    dx
}

pub(crate) fn avg_backward<T: Real>(geom: &PoolGeom, g: &[T]) -> Vec<T> {
    let (h, w) = (geom.h, geom.w);
    let mut dx = vec![T::zero(); geom.planes * h * w];
    for p in 0..geom.planes {
        for oy in 0..geom.ho {
            for ox in 0..geom.wo {
                let (y0, y1, x0, x1) = geom.window(oy, ox);
                let share = g[(p * geom.ho + oy) * geom.wo + ox] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        dx[p * h * w + iy * w + ix] += share;
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![1, 1, h, w], v).unwrap()
    }

    #[test]
    fn max_pool_spreads_center_peak() {
        let mut tape = Tape::new();
        let x = tape.constant(map(3, 3, &[0., 0., 0., 0., 5., 0., 0., 0., 0.]));
        let y = tape.max_pool2d(x, 3, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0; 9]);
    }

    #[test]
    fn global_average() {
        let mut tape = Tape::new();
        let x = tape.constant(map(2, 2, &[1., 2., 3., 4.]));
        let y = tape.avg_pool2d(x, 2, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(map(2, 3, &[1., -2., 3., 0.5, 7., -1.]));
        let y = tape.max_pool2d(x, 1, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn avg_padding_excluded_from_divisor() {
        let mut tape = Tape::new();
        let x = tape.constant(map(2, 2, &[1., 2., 3., 4.]));
        let y = tape.avg_pool2d(x, 3, 1, 1).unwrap();
        // every 3x3 window covers the full 2x2 map
        assert_eq!(tape.value(y).data(), &[2.5; 4]);
    }

    #[test]
    fn tie_gradient_goes_to_first_occurrence() {
        let mut tape = Tape::new();
        let x = tape.param(map(1, 3, &[2., 2., 1.]));
        let y = tape.max_pool2d(x, 3, 1, 1).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        // windows: [2,2] -> idx0, [2,2,1] -> idx0, [2,1] -> idx1
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn oversized_kernel_and_padding_rules() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(map(2, 2, &[1., 2., 3., 4.]));
        assert!(tape.max_pool2d(x, 5, 1, 1).is_err());
        assert!(tape.max_pool2d(x, 2, 1, 2).is_err());
    }
}
