//! Randomized per-op gradient checks on small shapes (extents ≤ 5).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_tape_fn, random_projection, GradCheckOptions, GradCheckReport};
use crate::error::Result;
use crate::ops::norm::BatchNormMode;
use crate::ops::pool::PoolKind;
use crate::ops::resize::ResizeKind;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A named gradient check; `run(seed)` draws its own shapes and values.
#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradCheckReport>,
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("positive extents")
}

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { seed, ..GradCheckOptions::default() }
}

/// Checks `f(tape, vars)` projected onto fixed random weights.
fn check<F>(seed: u64, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_tape_fn(
        inputs,
        |tape, vars| {
            let out = f(tape, vars)?;
            random_projection(tape, out, seed)
        },
        &opts(seed),
    )
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let k = r.gen_range(1..=3);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..k);
    let (b, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (r.gen_range(k..=5), r.gen_range(k..=5));
    let with_bias = r.gen_bool(0.5);
    let mut inputs = vec![random_tensor(&mut r, &[b, cin, h, w]), random_tensor(&mut r, &[cout, cin, k, k])];
    if with_bias {
        inputs.push(random_tensor(&mut r, &[cout]));
    }
    check(seed, &inputs, |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), stride, pad))
}

fn conv2d_per_sample(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let k = [1, 3][r.gen_range(0..2)];
    let (b, cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (r.gen_range(k..=5), r.gen_range(k..=5));
    let inputs = [random_tensor(&mut r, &[b, cin, h, w]), random_tensor(&mut r, &[b, cout, cin, k, k])];
    check(seed, &inputs, |t, v| t.conv2d(v[0], v[1], None, 1, k / 2))
}

fn batch_norm(seed: u64, train: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let c = r.gen_range(1..=3);
    // at least 3 elements per channel so batch variance is well away from zero
    let shape = loop {
        let s = [r.gen_range(1..=3), c, r.gen_range(1..=4), r.gen_range(1..=4)];
        if s[0] * s[2] * s[3] >= 3 {
            break s;
        }
    };
    let inputs = [random_tensor(&mut r, &shape), random_tensor(&mut r, &[c]), random_tensor(&mut r, &[c])];
    let mean: Vec<f64> = (0..c).map(|_| r.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| r.gen_range(0.5..2.0)).collect();
    check(seed, &inputs, move |t, v| {
        let (mut rm, mut rv) = (mean.clone(), var.clone());
        let mode = if train {
            BatchNormMode::Train { running_mean: &mut rm, running_var: &mut rv, momentum: 0.1 }
        } else {
            BatchNormMode::Eval { running_mean: &mean, running_var: &var }
        };
        t.batch_norm(v[0], v[1], v[2], mode, 1e-5)
    })
}

fn small_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = r.gen_range(1..=4);
    (0..rank).map(|_| r.gen_range(1..=4)).collect()
}

fn unary(seed: u64, f: fn(&mut Tape<f64>, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let inputs = [random_tensor(&mut r, &shape).map(|v| 3.0 * v)];
    check(seed, &inputs, |t, v| f(t, v[0]))
}

fn softmax(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let axis = r.gen_range(0..shape.len());
    let inputs = [random_tensor(&mut r, &shape).map(|v| 2.0 * v)];
    check(seed, &inputs, |t, v| t.softmax(v[0], axis))
}

fn pool(seed: u64, kind: PoolKind) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let k = r.gen_range(1..=3);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..k);
    let shape = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(k..=5), r.gen_range(k..=5)];
    let inputs = [random_tensor(&mut r, &shape)];
    check(seed, &inputs, |t, v| t.pool2d(v[0], kind, k, stride, pad))
}

fn resize(seed: u64, kind: ResizeKind) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=5), r.gen_range(1..=5)];
    let (oh, ow) = (r.gen_range(1..=5), r.gen_range(1..=5));
    let inputs = [random_tensor(&mut r, &shape)];
    check(seed, &inputs, |t, v| t.resize(v[0], oh, ow, kind))
}

fn linear(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, fin, fout) = (r.gen_range(1..=4), r.gen_range(1..=5), r.gen_range(1..=5));
    let inputs = [random_tensor(&mut r, &[b, fin]), random_tensor(&mut r, &[fout, fin]), random_tensor(&mut r, &[fout])];
    check(seed, &inputs, |t, v| t.linear(v[0], v[1], Some(v[2])))
}

/// A shape and a broadcast-compatible partner (singleton axes, dropped leading axes).
fn broadcast_pair(r: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let full = small_shape(r);
    let drop = r.gen_range(0..full.len());
    let partner = full[drop..].iter().map(|&d| if r.gen_bool(0.5) { 1 } else { d }).collect();
    if r.gen_bool(0.5) {
        (full, partner)
    } else {
        (partner, full)
    }
}

fn binary(seed: u64, mul: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (a, b) = broadcast_pair(&mut r);
    let inputs = [random_tensor(&mut r, &a), random_tensor(&mut r, &b)];
    check(seed, &inputs, |t, v| if mul { t.mul(v[0], v[1]) } else { t.add(v[0], v[1]) })
}

fn scalar_op(seed: u64, mul: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let s = r.gen_range(-2.0..2.0);
    let inputs = [random_tensor(&mut r, &shape)];
    check(seed, &inputs, move |t, v| if mul { t.mul_scalar(v[0], s) } else { t.add_scalar(v[0], s) })
}

fn reduction(seed: u64, which: u8) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let axis = r.gen_range(0..shape.len());
    let inputs = [random_tensor(&mut r, &shape)];
    check(seed, &inputs, move |t, v| {
        let x = t.mul(v[0], v[0])?;
        match which {
            0 => t.sum(x),
            1 => t.mean(x),
            _ => t.mean_axis(x, axis),
        }
    })
}

fn reshape(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let n: usize = shape.iter().product();
    let inputs = [random_tensor(&mut r, &shape)];
    check(seed, &inputs, move |t, v| t.reshape(v[0], &[n]))
}

fn concat(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let base = small_shape(&mut r);
    let axis = r.gen_range(0..base.len());
    let count = r.gen_range(1..=3);
    let inputs: Vec<_> = (0..count)
        .map(|_| {
            let mut s = base.clone();
            s[axis] = r.gen_range(1..=3);
            random_tensor(&mut r, &s)
        })
        .collect();
    check(seed, &inputs, move |t, v| t.concat(v, axis))
}

fn slice(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let axis = r.gen_range(0..shape.len());
    let start = r.gen_range(0..shape[axis]);
    let len = r.gen_range(1..=shape[axis] - start);
    let inputs = [random_tensor(&mut r, &shape)];
    check(seed, &inputs, move |t, v| t.slice(v[0], axis, start, len))
}

fn mse(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = small_shape(&mut r);
    let inputs = [random_tensor(&mut r, &shape), random_tensor(&mut r, &shape)];
    check_tape_fn(&inputs, |t, v| t.mse(v[0], v[1]), &opts(seed))
}

fn dynamic_kernel(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, n, cout, cin, k) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3));
    let inputs = [
        random_tensor(&mut r, &[n, cout, cin, k, k]),
        random_tensor(&mut r, &[b, n]),
        random_tensor(&mut r, &[b, cout]),
        random_tensor(&mut r, &[b, cin]),
        random_tensor(&mut r, &[b, k, k]),
    ];
    check(seed, &inputs, |t, v| t.dynamic_kernel(v[0], v[1], v[2], v[3], v[4]))
}

/// Every differentiable tensor op.
pub fn op_cases() -> Vec<GradCase> {
    vec![
        GradCase { name: "conv2d", run: conv2d },
        GradCase { name: "conv2d_per_sample", run: conv2d_per_sample },
        GradCase { name: "batch_norm_train", run: |s| batch_norm(s, true) },
        GradCase { name: "batch_norm_eval", run: |s| batch_norm(s, false) },
        GradCase { name: "relu", run: |s| unary(s, |t, x| t.relu(x)) },
        GradCase { name: "sigmoid", run: |s| unary(s, |t, x| t.sigmoid(x)) },
        GradCase { name: "softmax", run: softmax },
        GradCase { name: "max_pool", run: |s| pool(s, PoolKind::Max) },
        GradCase { name: "avg_pool", run: |s| pool(s, PoolKind::Avg) },
        GradCase { name: "resize_bilinear", run: |s| resize(s, ResizeKind::Bilinear) },
        GradCase { name: "resize_nearest", run: |s| resize(s, ResizeKind::Nearest) },
        GradCase { name: "linear", run: linear },
        GradCase { name: "add", run: |s| binary(s, false) },
        GradCase { name: "mul", run: |s| binary(s, true) },
        GradCase { name: "add_scalar", run: |s| scalar_op(s, false) },
        GradCase { name: "mul_scalar", run: |s| scalar_op(s, true) },
        GradCase { name: "sum", run: |s| reduction(s, 0) },
        GradCase { name: "mean", run: |s| reduction(s, 1) },
        GradCase { name: "mean_axis", run: |s| reduction(s, 2) },
        GradCase { name: "reshape", run: reshape },
        GradCase { name: "concat", run: concat },
        GradCase { name: "slice", run: slice },
        GradCase { name: "mse", run: mse },
        GradCase { name: "dynamic_kernel", run: dynamic_kernel },
    ]
}
