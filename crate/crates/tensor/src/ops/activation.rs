use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// `(outer, axis extent, inner)` strides for reducing along `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let value = self.value(input).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid { input })
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check_var(input)?;
        let x = self.value(input);
        if axis >= x.rank() {
            return Err(shape_err("softmax", format!("axis {axis} out of range for shape {:?}", x.shape())));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..n {
                    let e = (src[at(k)] - m).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[at(k)] /= total;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push(value, Op::Softmax { input, axis })
    }
}

pub(crate) fn relu_backward<T: Real>(x: &[T], g: &[T]) -> Vec<T> {
    x.iter().zip(g).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect()
}

pub(crate) fn sigmoid_backward<T: Real>(y: &[T], g: &[T]) -> Vec<T> {
    y.iter().zip(g).map(|(&y, &g)| g * y * (T::one() - y)).collect()
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, axis: usize, g: &[T]) -> Vec<T> {
    let (outer, n, inner) = axis_split(y.shape(), axis);
    let yd = y.data();
    let mut dx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let dot: T = (0..n).map(|k| g[at(k)] * yd[at(k)]).sum();
            for k in 0..n {
                dx[at(k)] = yd[at(k)] * (g[at(k)] - dot);
            }
        }
    }
    dx
}
