//! 2-D convolution via im2col + GEMM.
//!
//! The kernel is either shared (`Cout×Cin×KH×KW`) or per sample
//! (`B×Cout×Cin×KH×KW`, used by dynamic convolution).

use rayon::prelude::*;

use crate::error::{config_err, shape_err, Result};
use crate::kernels::{conv1_forward, conv1_input_grad, conv1_kernel_grad, Conv1};
use crate::real::{MatRef, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
    pub per_sample: bool,
}

impl ConvGeom {
    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
    fn out_len(&self) -> usize {
        self.cout * self.ho * self.wo
    }
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn kernel_len(&self) -> usize {
        self.cout * self.patch()
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
    /// A 1×1, stride-1, unpadded conv reads the input directly as its column matrix.
    fn direct(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output extent of a sliding window: `floor((size + 2·pad − k) / stride) + 1`.
pub fn window_output_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output columns `ox` whose input column `ox·stride + kx − pad` lies inside `0..w`.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let lo = if kx >= g.pad { 0 } else { (g.pad - kx).div_ceil(g.stride).min(g.wo) };
    let hi = if g.w + g.pad > kx { ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.wo) } else { 0 };
    (lo, hi.max(lo))
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let n = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.ho {
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if lo < hi {
                        let first = lo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (v, s) in out_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                                *v = *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let n = g.cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * n..(row + 1) * n];
                let (lo, hi) = valid_cols(g, kx);
                if lo >= hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(s) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

fn geometry(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    let &[batch, cin, h, w] = x else {
        return Err(shape_err("conv2d", format!("input must be B×C×H×W, got {x:?}")));
    };
    let (per_sample, kshape) = match *k {
        [_, _, _, _] => (false, k),
        [kb, _, _, _, _] => {
            if kb != batch {
                return Err(shape_err("conv2d", format!("per-sample kernel batch {kb} != input batch {batch}")));
            }
            (true, &k[1..])
        }
        _ => return Err(shape_err("conv2d", format!("kernel must be Cout×Cin×K×K, got {k:?}"))),
    };
    let (cout, kcin, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    if kcin != cin {
        return Err(shape_err("conv2d", format!("input channels: input has {cin}, kernel expects {kcin}")));
    }
    if stride == 0 {
        return Err(config_err("conv2d", "stride must be >= 1"));
    }
    let ho = window_output_extent(h, kh, stride, pad)
        .ok_or_else(|| config_err("conv2d", format!("height: kernel {kh} exceeds padded input {}", h + 2 * pad)))?;
    let wo = window_output_extent(w, kw, stride, pad)
        .ok_or_else(|| config_err("conv2d", format!("width: kernel {kw} exceeds padded input {}", w + 2 * pad)))?;
    Ok(ConvGeom { batch, cin, h, w, cout, kh, kw, stride, pad, ho, wo, per_sample })
}

/// Geometry for the unpadded-im2col path, when the f32 kernels apply.
fn direct_geom<T: Real>(g: &ConvGeom) -> Option<Conv1> {
    (T::as_f32(&[]).is_some() && g.stride == 1 && g.kh == g.kw && !g.direct())
        .then_some(Conv1 { cin: g.cin, h: g.h, w: g.w, cout: g.cout, k: g.kh, pad: g.pad })
}

impl<T: Real> Tape<T> {
    /// Cross-correlation with zero padding, as in every deep-learning framework.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.check_var(input)?;
        self.check_var(kernel)?;
        let g = geometry(self.shape(input), self.shape(kernel), stride, padding)?;
        if let Some(b) = bias {
            self.check_var(b)?;
            if self.shape(b) != [g.cout] {
                return Err(shape_err("conv2d", format!("bias must have shape [{}], got {:?}", g.cout, self.shape(b))));
            }
        }
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let bias_data = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); g.batch * g.out_len()];
        out.par_chunks_mut(g.out_len()).enumerate().for_each(|(b, out_b)| {
            let x_b = &x[b * g.in_len()..(b + 1) * g.in_len()];
            let k_b = if g.per_sample { &k[b * g.kernel_len()..(b + 1) * g.kernel_len()] } else { k };
            let fast = direct_geom::<T>(&g).is_some_and(|d| {
                conv1_forward(T::as_f32(x_b).expect("f32"), T::as_f32(k_b).expect("f32"), &d, T::as_f32_mut(out_b).expect("f32"))
            });
            if !fast {
                let owned;
                let col: &[T] = if g.direct() {
                    x_b
                } else {
                    let mut buf = vec![T::zero(); g.patch() * g.cols()];
                    im2col(x_b, &g, &mut buf);
                    owned = buf;
                    &owned
                };
                T::matmul_nn(g.cout, g.patch(), g.cols(), MatRef::rows(k_b, g.patch()), col, out_b);
            }
            if let Some(bd) = bias_data {
                for (o, chunk) in out_b.chunks_mut(g.cols()).enumerate() {
                    for v in chunk {
                        *v += bd[o];
                    }
                }
            }
        });
        let value = Tensor::new(vec![g.batch, g.cout, g.ho, g.wo], out)?;
        self.push(value, Op::Conv2d { input, kernel, bias, geom: g })
    }
}

pub(crate) fn backward<T: Real>(
    tape: &Tape<T>,
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    g: &ConvGeom,
    grad: &[T],
) -> Vec<(Var, Vec<T>)> {
    let x = tape.value(input).data();
    let k = tape.value(kernel).data();
    let need_x = tape.requires_grad(input);
    let need_k = tape.requires_grad(kernel);

    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..g.batch)
        .into_par_iter()
        .map(|b| {
            let g_b = &grad[b * g.out_len()..(b + 1) * g.out_len()];
            let x_b = &x[b * g.in_len()..(b + 1) * g.in_len()];
            let k_b = if g.per_sample { &k[b * g.kernel_len()..(b + 1) * g.kernel_len()] } else { k };
            let direct = direct_geom::<T>(g);
            let mut dx_b = Vec::new();
            if need_x {
                dx_b = vec![T::zero(); g.in_len()];
                let fast = direct.is_some_and(|d| {
                    conv1_input_grad(T::as_f32(g_b).expect("f32"), T::as_f32(k_b).expect("f32"), &d, T::as_f32_mut(&mut dx_b).expect("f32"))
                });
                if !fast && g.direct() {
                    T::matmul_nn(g.cin, g.cout, g.cols(), MatRef::transposed(k_b, g.patch()), g_b, &mut dx_b);
                } else if !fast {
                    let mut dcol = vec![T::zero(); g.patch() * g.cols()];
                    T::matmul_nn(g.patch(), g.cout, g.cols(), MatRef::transposed(k_b, g.patch()), g_b, &mut dcol);
                    col2im(&dcol, g, &mut dx_b);
                }
            }
            let mut dk_b = Vec::new();
            if need_k {
                dk_b = vec![T::zero(); g.kernel_len()];
                let fast = direct.is_some_and(|d| {
                    conv1_kernel_grad(T::as_f32(x_b).expect("f32"), T::as_f32(g_b).expect("f32"), &d, T::as_f32_mut(&mut dk_b).expect("f32"))
                });
                let owned;
                if !fast {
                    let col: &[T] = if g.direct() {
                        x_b
                    } else {
                        let mut buf = vec![T::zero(); g.patch() * g.cols()];
                        im2col(x_b, g, &mut buf);
                        owned = buf;
                        &owned
                    };
                    T::matmul_nt(g.cout, g.cols(), g.patch(), g_b, col, &mut dk_b);
                }
            }
            (dx_b, dk_b)
        })
        .collect();

    let mut grads = Vec::new();
    if need_x {
        let mut dx = Vec::with_capacity(g.batch * g.in_len());
        for (dx_b, _) in &per_sample {
            dx.extend_from_slice(dx_b);
        }
        grads.push((input, dx));
    }
    if need_k {
        let dk = if g.per_sample {
            per_sample.iter().flat_map(|(_, dk_b)| dk_b.iter().copied()).collect()
        } else {
            // fixed sample order keeps the reduction deterministic
            let mut dk = vec![T::zero(); g.kernel_len()];
            for (_, dk_b) in &per_sample {
                for (a, b) in dk.iter_mut().zip(dk_b) {
                    *a += *b;
                }
            }
            dk
        };
        grads.push((kernel, dk));
    }
    if let Some(bv) = bias {
        let mut db = vec![T::zero(); g.cout];
        for b in 0..g.batch {
            for (o, chunk) in grad[b * g.out_len()..(b + 1) * g.out_len()].chunks(g.cols()).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        grads.push((bv, db));
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    /// Direct seven-loop convolution used as a reference.
    fn naive(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (b, cin, h, w) = x.dims4().unwrap();
        let (cout, _, kh, kw) = k.dims4().unwrap();
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![b, cout, ho, wo]);
        for n in 0..b {
            for o in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.get(&[n, c, iy as usize, ix as usize]) * k.get(&[o, c, ky, kx]);
                                    }
                                }
                            }
                        }
                        out.set(&[n, o, oy, ox], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_on_single_pixel() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 1], &[5.0]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);
    }

    #[test]
    fn two_by_two_dot_product() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(t(&[1, 1, 2, 2], &[1.0, 1.0, 1.0, 1.0]));
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[10.0]);
    }

    #[test]
    fn strided_padded_output_shape() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::ones(vec![1, 1, 4, 4]));
        let k = tape.constant(Tensor::<f64>::ones(vec![1, 1, 3, 3]));
        let y = tape.conv2d(x, k, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
    }

    #[test]
    fn matches_naive_loops() {
        let xs: Vec<f64> = (0..2 * 3 * 5 * 4).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let ks: Vec<f64> = (0..4 * 3 * 3 * 3).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let x = t(&[2, 3, 5, 4], &xs);
        let k = t(&[4, 3, 3, 3], &ks);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let kv = tape.constant(k.clone());
            let y = tape.conv2d(xv, kv, None, stride, pad).unwrap();
            let want = naive(&x, &k, stride, pad);
            assert!(tape.value(y).max_abs_diff(&want).unwrap() < 1e-12, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(vec![1, 2, 3, 3]));
        let k = tape.constant(Tensor::ones(vec![1, 3, 3, 3]));
        let err = tape.conv2d(x, k, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(vec![1, 1, 2, 2]));
        let k = tape.constant(Tensor::ones(vec![1, 1, 5, 5]));
        assert!(tape.conv2d(x, k, None, 1, 0).is_err());
    }

    #[test]
    fn output_extent_formula() {
        for h in 1..12 {
            for k in 1..6 {
                for s in 1..4 {
                    for p in 0..3 {
                        let got = window_output_extent(h, k, s, p);
                        if k > h + 2 * p {
                            assert_eq!(got, None);
                        } else {
                            assert_eq!(got, Some((h + 2 * p - k) / s + 1));
                        }
                    }
                }
            }
        }
    }
}
