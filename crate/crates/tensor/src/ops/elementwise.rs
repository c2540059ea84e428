//! Broadcasting add/mul (numpy rules, right-aligned) and scalar variants.

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| if i + s.len() >= rank { s[i + s.len() - rank] } else { 1 };
    (0..rank)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Row-major strides of `shape` aligned to `out`, zero along broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element in order.
fn for_each_pair(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let sa = aligned_strides(a, out);
    let sb = aligned_strides(b, out);
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let rows: usize = out[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let (mut ia, mut ib) = (0usize, 0usize);
    for row in 0..rows {
        for j in 0..last {
            f(row * last + j, ia + j * la, ib + j * lb);
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Mul,
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let name = match kind {
            Binary::Add => "add",
            Binary::Mul => "mul",
        };
        let out_shape = broadcast_shape(&sa, &sb)
            .ok_or_else(|| shape_err(name, format!("shapes {sa:?} and {sb:?} are not broadcastable")))?;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let op = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Mul => x * y,
        };
        let out: Vec<T> = if sa == sb {
            xa.iter().zip(xb).map(|(&x, &y)| op(x, y)).collect()
        } else {
            let mut out = vec![T::zero(); out_shape.iter().product()];
            for_each_pair(&out_shape, &sa, &sb, |o, i, j| out[o] = op(xa[i], xb[j]));
            out
        };
        let value = Tensor::new(out_shape, out)?;
        match kind {
            Binary::Add => self.push(value, Op::Add { a, b }),
            Binary::Mul => self.push(value, Op::Mul { a, b }),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn add_scalar(&mut self, input: Var, s: T) -> Result<Var> {
        self.check_var(input)?;
        let value = self.value(input).map(|v| v + s);
        self.push(value, Op::AddScalar { input })
    }

    pub fn mul_scalar(&mut self, input: Var, factor: T) -> Result<Var> {
        self.check_var(input)?;
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::MulScalar { input, factor })
    }
}

/// Sums `g` (shaped `out`) down to `shape` along broadcast axes, optionally
/// weighting each element by the other operand.
fn reduce_to<T: Real>(g: &[T], out: &[usize], shape: &[usize], other: Option<(&[T], &[usize])>) -> Vec<T> {
    match other {
        None if shape == out => g.to_vec(),
        Some((o, os)) if shape == out && os == out => g.iter().zip(o).map(|(&g, &o)| g * o).collect(),
        None => {
            let mut r = vec![T::zero(); shape.iter().product()];
            for_each_pair(out, shape, shape, |k, i, _| r[i] += g[k]);
            r
        }
        Some((o, os)) => {
            let mut r = vec![T::zero(); shape.iter().product()];
            for_each_pair(out, shape, os, |k, i, j| r[i] += g[k] * o[j]);
            r
        }
    }
}

pub(crate) fn add_backward<T: Real>(tape: &Tape<T>, a: Var, b: Var, out: &[usize], g: &[T], wa: bool, wb: bool) -> Vec<(Var, Vec<T>)> {
    let mut grads = Vec::new();
    if wa {
        grads.push((a, reduce_to(g, out, tape.shape(a), None)));
    }
    if wb {
        grads.push((b, reduce_to(g, out, tape.shape(b), None)));
    }
    grads
}

pub(crate) fn mul_backward<T: Real>(tape: &Tape<T>, a: Var, b: Var, out: &[usize], g: &[T], wa: bool, wb: bool) -> Vec<(Var, Vec<T>)> {
    let (va, vb) = (tape.value(a), tape.value(b));
    let mut grads = Vec::new();
    if wa {
        grads.push((a, reduce_to(g, out, va.shape(), Some((vb.data(), vb.shape())))));
    }
    if wb {
        grads.push((b, reduce_to(g, out, vb.shape(), Some((va.data(), va.shape())))));
    }
    grads
}
