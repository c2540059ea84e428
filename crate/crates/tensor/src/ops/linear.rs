use crate::error::{shape_err, Result};
use crate::real::{MatRef, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// `y = x·Wᵀ + b` for `x: B×Fin`, `W: Fout×Fin`, `b: Fout`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        self.check_var(input)?;
        self.check_var(weight)?;
        let &[batch, fin] = self.shape(input) else {
            return Err(shape_err("linear", format!("input must be B×Fin, got {:?}", self.shape(input))));
        };
        let &[fout, wfin] = self.shape(weight) else {
            return Err(shape_err("linear", format!("weight must be Fout×Fin, got {:?}", self.shape(weight))));
        };
        if wfin != fin {
            return Err(shape_err("linear", format!("input features {fin} != weight features {wfin}")));
        }
        if let Some(b) = bias {
            self.check_var(b)?;
            if self.shape(b) != [fout] {
                return Err(shape_err("linear", format!("bias must be [{fout}], got {:?}", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); batch * fout];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bd);
            }
        }
        T::gemm(
            batch,
            fin,
            fout,
            T::one(),
            MatRef::rows(self.value(input).data(), fin),
            MatRef::transposed(self.value(weight).data(), fin),
            T::one(),
            &mut out,
        );
        let value = Tensor::new(vec![batch, fout], out)?;
        self.push(value, Op::Linear { input, weight, bias })
    }
}

pub(crate) fn backward<T: Real>(tape: &Tape<T>, input: Var, weight: Var, bias: Option<Var>, g: &[T]) -> Vec<(Var, Vec<T>)> {
    let (batch, fin) = (tape.shape(input)[0], tape.shape(input)[1]);
    let fout = tape.shape(weight)[0];
    let mut grads = Vec::new();
    if tape.requires_grad(input) {
        let mut dx = vec![T::zero(); batch * fin];
        T::gemm(batch, fout, fin, T::one(), MatRef::rows(g, fout), MatRef::rows(tape.value(weight).data(), fin), T::zero(), &mut dx);
        grads.push((input, dx));
    }
    if tape.requires_grad(weight) {
        let mut dw = vec![T::zero(); fout * fin];
        T::gemm(fout, batch, fin, T::one(), MatRef::transposed(g, fout), MatRef::rows(tape.value(input).data(), fin), T::zero(), &mut dw);
        grads.push((weight, dw));
    }
    if let Some(b) = bias {
        let mut db = vec![T::zero(); fout];
        for row in g.chunks(fout) {
            for (a, v) in db.iter_mut().zip(row) {
                *a += *v;
            }
        }
        grads.push((b, db));
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let w = tape.constant(Tensor::from_f64(vec![3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn small_affine_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(vec![1, 2], &[2., 3.]).unwrap());
        let w = tape.constant(Tensor::from_f64(vec![1, 2], &[1., 1.]).unwrap());
        let b = tape.constant(Tensor::from_f64(vec![1], &[1.]).unwrap());
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn feature_mismatch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(vec![1, 3]));
        let w = tape.constant(Tensor::ones(vec![2, 2]));
        assert!(tape.linear(x, w, None).is_err());
    }
}
