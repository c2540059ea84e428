//! Wengert tape: every forward op appends a node holding its output value and
//! the data its backward rule needs. `backward` replays the nodes in reverse.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Result, TensorError};
use crate::ops::conv::ConvGeom;
use crate::ops::pool::PoolGeom;
use crate::ops::resize::ResizeKind;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu { input: Var },
    Sigmoid { input: Var },
    Softmax { input: Var, axis: usize },
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, geom: PoolGeom },
    Resize { input: Var, kind: ResizeKind },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddScalar { input: Var },
    MulScalar { input: Var, factor: T },
    Sum { input: Var },
    Mean { input: Var },
    MeanAxis { input: Var, axis: usize },
    Reshape { input: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Mse { pred: Var, target: Var },
    DynamicKernel { weights: Var, kernel_attn: Var, filter_attn: Var, channel_attn: Var, spatial_attn: Var, mixed: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::MaxPool { .. } => "max_pool",
            Op::AvgPool { .. } => "avg_pool",
            Op::Resize { .. } => "resize",
            Op::Linear { .. } => "linear",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::AddScalar { .. } => "add_scalar",
            Op::MulScalar { .. } => "mul_scalar",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Reshape { .. } => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Mse { .. } => "mse",
            Op::DynamicKernel { .. } => "dynamic_kernel",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, .. } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Softmax { input, .. }
            | Op::MaxPool { input, .. }
            | Op::AvgPool { input, .. }
            | Op::Resize { input, .. }
            | Op::AddScalar { input }
            | Op::MulScalar { input, .. }
            | Op::Sum { input }
            | Op::Mean { input }
            | Op::MeanAxis { input, .. }
            | Op::Reshape { input }
            | Op::Slice { input, .. } => vec![*input],
            Op::Linear { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Mse { pred, target } => vec![*pred, *target],
            Op::DynamicKernel { weights, kernel_attn, filter_attn, channel_attn, spatial_attn, .. } => {
                vec![*weights, *kernel_attn, *filter_attn, *channel_attn, *spatial_attn]
            }
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    /// Accumulated gradient; only leaves that require grad carry one.
    pub(crate) grad: Option<Tensor<T>>,
}

/// Ordered record of executed operations.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

static DEGENERATE_BN_WARNED: AtomicBool = AtomicBool::new(false);

pub(crate) fn warn_degenerate_batch_norm() {
    if !DEGENERATE_BN_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("batch_norm: one value per channel in train mode; variance is zero and only eps guards it");
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Gradients accumulate on it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub(crate) fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownVar(v.0))
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        let name = op.name();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Populates `grad` of every leaf reachable from `loss` with `∂loss/∂leaf`,
    /// adding to whatever an earlier pass left there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        self.check_var(loss)?;
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut adjoints: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adjoints[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(upstream) = adjoints[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(g) => {
                        for (a, b) in g.data_mut().iter_mut().zip(&upstream) {
                            *a += *b;
                        }
                    }
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), upstream)?),
                }
                continue;
            }
            for (input, grad) in self.backward_op(id, &upstream)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adjoints[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&grad) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, id: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        use crate::ops::*;
        let node = &self.nodes[id];
        let out = &node.value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let grads = match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, geom } => conv::backward(self, *input, *kernel, *bias, geom, g),
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                norm::backward(self, *input, *gamma, *beta, xhat, inv_std, *train, g)
            }
            Op::Relu { input } => vec![(*input, activation::relu_backward(self.value(*input).data(), g))],
            Op::Sigmoid { input } => vec![(*input, activation::sigmoid_backward(out.data(), g))],
            Op::Softmax { input, axis } => vec![(*input, activation::softmax_backward(out, *axis, g))],
            Op::MaxPool { input, argmax } => {
                vec![(*input, pool::max_backward(self.value(*input).numel(), argmax, g))]
            }
            Op::AvgPool { input, geom } => vec![(*input, pool::avg_backward(geom, g))],
            Op::Resize { input, kind } => vec![(*input, resize::backward(self.value(*input), out, *kind, g))],
            Op::Linear { input, weight, bias } => linear::backward(self, *input, *weight, *bias, g),
            Op::Add { a, b } => elementwise::add_backward(self, *a, *b, out.shape(), g, wants(a), wants(b)),
            Op::Mul { a, b } => elementwise::mul_backward(self, *a, *b, out.shape(), g, wants(a), wants(b)),
            Op::AddScalar { input } => vec![(*input, g.to_vec())],
            Op::MulScalar { input, factor } => vec![(*input, g.iter().map(|&v| v * *factor).collect())],
            Op::Sum { input } => vec![(*input, vec![g[0]; self.value(*input).numel()])],
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                vec![(*input, vec![g[0] / T::lit(n as f64); n])]
            }
            Op::MeanAxis { input, axis } => vec![(*input, reduce::mean_axis_backward(self.value(*input).shape(), *axis, g))],
            Op::Reshape { input } => vec![(*input, g.to_vec())],
            Op::Concat { inputs, axis } => shape::concat_backward(self, inputs, *axis, g),
            Op::Slice { input, axis, start } => {
                vec![(*input, shape::slice_backward(self.value(*input).shape(), *axis, *start, out.shape(), g))]
            }
            Op::Mse { pred, target } => loss::mse_backward(self, *pred, *target, g[0]),
            Op::DynamicKernel { weights, kernel_attn, filter_attn, channel_attn, spatial_attn, mixed } => {
                dynamic::backward(self, *weights, *kernel_attn, *filter_attn, *channel_attn, *spatial_attn, mixed, g)
            }
        };
        Ok(grads.into_iter().filter(|(v, _)| wants(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_tensor(values: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![values.len()], values).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(vec_tensor(&[1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_then_resets() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(vec_tensor(&[1.0, -2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        let once = tape.grad(x).unwrap().clone();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_usage_errors() {
        let mut tape = Tape::<f64>::new();
        assert_eq!(tape.backward(Var(0)), Err(TensorError::EmptyTape));
        let x = tape.param(vec_tensor(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(vec_tensor(&[3.0]));
        let c = tape.constant(vec_tensor(&[4.0]));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(vec_tensor(&[f64::MAX]));
        let err = tape.mul_scalar(x, 10.0).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { op: "mul_scalar" });
    }
}
