use crate::error::{shape_err, Result};
use crate::ops::activation::axis_split;
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        self.check_var(input)?;
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape { input })
    }

    /// Joins tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        for &v in inputs {
            self.check_var(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range for shape {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(shape_err("concat", format!("{s:?} does not match {base:?} off axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::Concat { inputs: inputs.to_vec(), axis })
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_var(input)?;
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err("slice", format!("range {start}..{} invalid on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        self.push(value, Op::Slice { input, axis, start })
    }
}

pub(crate) fn concat_backward<T: Real>(tape: &Tape<T>, inputs: &[Var], axis: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let base = tape.shape(inputs[0]);
    let (outer, _, inner) = axis_split(base, axis);
    let total: usize = inputs.iter().map(|&v| tape.shape(v)[axis]).sum();
    let mut grads = Vec::new();
    let mut offset = 0;
    for &v in inputs {
        let n = tape.shape(v)[axis];
        let mut d = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            d.extend_from_slice(&g[(o * total + offset) * inner..(o * total + offset + n) * inner]);
        }
        grads.push((v, d));
        offset += n;
    }
    grads
}

pub(crate) fn slice_backward<T: Real>(shape: &[usize], axis: usize, start: usize, out: &[usize], g: &[T]) -> Vec<T> {
    let (outer, n, inner) = axis_split(shape, axis);
    let len = out[axis];
    let mut dx = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        dx[(o * n + start) * inner..(o * n + start + len) * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_recovers_parts() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64(vec![1, 2, 2, 1], &[1., 2., 3., 4.]).unwrap());
        let b = tape.constant(Tensor::from_f64(vec![1, 2, 3, 1], &[5., 6., 7., 8., 9., 10.]).unwrap());
        let c = tape.concat(&[a, b], 2).unwrap();
        assert_eq!(tape.shape(c), &[1, 2, 5, 1]);
        assert_eq!(tape.value(c).data(), &[1., 2., 5., 6., 7., 3., 4., 8., 9., 10.]);
        let back = tape.slice(c, 2, 2, 3).unwrap();
        assert_eq!(tape.value(back), tape.value(b));
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(vec![2, 3]));
        assert!(tape.slice(a, 1, 2, 2).is_err());
        assert!(tape.reshape(a, &[4]).is_err());
        let b = tape.constant(Tensor::ones(vec![3, 3]));
        assert!(tape.concat(&[a, b], 1).is_err());
    }
}
