use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_var(pred)?;
        self.check_var(target)?;
        if self.shape(pred) != self.shape(target) {
            return Err(shape_err("mse", format!("prediction {:?} vs target {:?}", self.shape(pred), self.shape(target))));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let total: T = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(total / T::lit(p.len() as f64));
        self.push(value, Op::Mse { pred, target })
    }
}

pub(crate) fn mse_backward<T: Real>(tape: &Tape<T>, pred: Var, target: Var, g: T) -> Vec<(Var, Vec<T>)> {
    let (p, t) = (tape.value(pred).data(), tape.value(target).data());
    let scale = g * T::lit(2.0) / T::lit(p.len() as f64);
    let dp: Vec<T> = p.iter().zip(t).map(|(&a, &b)| (a - b) * scale).collect();
    let dt = dp.iter().map(|&v| -v).collect();
    vec![(pred, dp), (target, dt)]
}
