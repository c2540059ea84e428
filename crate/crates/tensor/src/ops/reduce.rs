use crate::error::{shape_err, Result};
use crate::ops::activation::axis_split;
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let total: T = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let x = self.value(input);
        let total: T = x.data().iter().copied().sum();
        let value = Tensor::scalar(total / T::lit(x.numel() as f64));
        self.push(value, Op::Mean { input })
    }

    /// Mean along `axis`, keeping it as an extent-1 axis.
    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check_var(input)?;
        let x = self.value(input);
        if axis >= x.rank() {
            return Err(shape_err("mean_axis", format!("axis {axis} out of range for shape {:?}", x.shape())));
        }
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let src = x.data();
        let scale = T::one() / T::lit(n as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        for v in &mut out {
            *v *= scale;
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::MeanAxis { input, axis })
    }
}

pub(crate) fn mean_axis_backward<T: Real>(shape: &[usize], axis: usize, g: &[T]) -> Vec<T> {
    let (outer, n, inner) = axis_split(shape, axis);
    let scale = T::one() / T::lit(n as f64);
    let mut dx = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                dx[(o * n + k) * inner + i] = g[o * inner + i] * scale;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_axis_keeps_dim() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let rows = tape.mean_axis(x, 1).unwrap();
        assert_eq!(tape.shape(rows), &[2, 1]);
        assert_eq!(tape.value(rows).data(), &[2., 5.]);
        let cols = tape.mean_axis(x, 0).unwrap();
        assert_eq!(tape.value(cols).data(), &[2.5, 3.5, 4.5]);
        assert!(tape.mean_axis(x, 2).is_err());
    }

    #[test]
    fn mean_and_sum_are_scalars() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(vec![4], &[1., 2., 3., 6.]).unwrap());
        let s = tape.sum(x).unwrap();
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.value(s).item(), Some(12.0));
        assert_eq!(tape.value(m).item(), Some(3.0));
        assert!(tape.shape(m).is_empty());
    }
}
