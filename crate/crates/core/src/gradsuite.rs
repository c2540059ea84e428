//! Finite-difference gradient checks for every network block, alongside the
//! tensor library's per-op cases. All checks run in 64-bit, train mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sshd_tensor::gradcheck::{check_gradients, op_cases, random_projection, random_tensor, GradCheckOptions, GradCheckReport};
use sshd_tensor::{Tensor, TensorError, Var};

use crate::blocks::{CoordAttention, OdBlock, OdConv, ResidualBlock};
use crate::config::ModelConfig;
use crate::dcfm::Dcfm;
use crate::error::{CoreError, Result};
use crate::hcem::Hcem;
use crate::head::PredictHead;
use crate::hmrm::Hmrm;
use crate::model::Network;
use crate::params::{Ctx, Init, Mode, ParamId, ParamStore};

/// Coordinates probed per input or parameter tensor in block checks.
const BLOCK_COORDS: usize = 6;

fn to_tensor_err(e: CoreError) -> TensorError {
    match e {
        CoreError::Tensor(t) => t,
        e => TensorError::Config { op: "block", detail: e.to_string() },
    }
}

/// Checks the gradient of a random projection of `forward`'s outputs with
/// respect to both the random inputs and every parameter of the block.
fn check_block<B>(
    seed: u64,
    build: impl Fn(&mut ParamStore<f64>, &mut Init) -> B,
    shapes: &[Vec<usize>],
    forward: impl Fn(&B, &mut Ctx<f64>, &[Var]) -> Result<Vec<Var>>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = ParamStore::<f64>::new();
    let block = build(&mut base, &mut Init::new(seed));
    let ids: Vec<ParamId> = base.ids().collect();
    let mut tensors: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    let n_in = tensors.len();
    // zero-initialized heads would leave their inputs with identically zero gradients
    tensors.extend(ids.iter().map(|&id| {
        let v = base.value(id);
        if v.data().iter().all(|&x| x == 0.0) {
            random_tensor(&mut rng, v.shape()).map(|x| 0.5 * x)
        } else {
            v.clone()
        }
    }));
    let opts = GradCheckOptions { seed, max_coords: BLOCK_COORDS, ..GradCheckOptions::default() };
    let report = check_gradients(
        &tensors,
        |xs, with_grad| {
            let mut store = base.clone();
            for (&id, t) in ids.iter().zip(&xs[n_in..]) {
                store.set(id, t.clone());
            }
            let mut ctx = Ctx::new(&mut store, Mode::Train, true);
            let vars: Vec<Var> = xs[..n_in].iter().map(|x| ctx.tape.leaf(x.clone(), true)).collect();
            let outs = forward(&block, &mut ctx, &vars).map_err(to_tensor_err)?;
            let mut loss = random_projection(&mut ctx.tape, outs[0], seed)?;
            for (k, &o) in outs.iter().enumerate().skip(1) {
                let p = random_projection(&mut ctx.tape, o, seed.wrapping_add(k as u64))?;
                loss = ctx.tape.add(loss, p)?;
            }
            let value = ctx.tape.value(loss).item().unwrap_or(f64::NAN);
            if !with_grad {
                return Ok((value, None));
            }
            ctx.tape.backward(loss)?;
            let mut grads: Vec<Tensor<f64>> =
                vars.iter().zip(&xs[..n_in]).map(|(&v, x)| ctx.tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()))).collect();
            grads.extend(ids.iter().map(|&id| ctx.param_grad(id).cloned().unwrap_or_else(|| Tensor::zeros(base.value(id).shape().to_vec()))));
            Ok((value, Some(grads)))
        },
        &opts,
    )?;
    Ok(report)
}

fn small(branches: usize, columns: usize) -> ModelConfig {
    ModelConfig { branches, columns, width_mult: 2, input_size: 4, ..ModelConfig::default() }
}

/// Batch-2 feature maps for branches `1..=branches` of a `size × size` input.
fn branch_shapes(cfg: &ModelConfig, size: usize) -> Vec<Vec<usize>> {
    (1..=cfg.branches).map(|j| vec![2, cfg.channels(j), size >> (j - 1), size >> (j - 1)]).collect()
}

fn residual(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(1, 1);
    check_block(seed, |s, i| ResidualBlock::new(s, i, &cfg, "res", 3), &[vec![2, 3, 4, 4]], |b, c, v| Ok(vec![b.forward(c, v[0])?]))
}

fn odconv(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(1, 1);
    check_block(seed, |s, i| OdConv::new(s, i, &cfg, "od", 3, 2), &[vec![2, 3, 4, 4]], |b, c, v| Ok(vec![b.forward(c, v[0])?]))
}

fn coord_attention(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(1, 1);
    check_block(seed, |s, i| CoordAttention::new(s, i, &cfg, "ca", 3), &[vec![2, 3, 4, 5]], |b, c, v| Ok(vec![b.forward(c, v[0])?]))
}

fn odblock(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(1, 1);
    check_block(seed, |s, i| OdBlock::new(s, i, &cfg, "odb", 3), &[vec![2, 3, 4, 4]], |b, c, v| Ok(vec![b.forward(c, v[0])?]))
}

fn hcem(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(2, 4);
    check_block(seed, |s, i| Hcem::new(s, i, &cfg), &branch_shapes(&cfg, 4), |b, c, v| b.forward(c, v))
}

fn dcfm(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(3, 1);
    check_block(seed, |s, i| Dcfm::new(s, i, &cfg, "dcfm"), &branch_shapes(&cfg, 8), |b, c, v| b.forward(c, v))
}

fn hmrm(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(3, 1);
    check_block(seed, |s, i| Hmrm::new(s, i, &cfg), &branch_shapes(&cfg, 8), |b, c, v| b.forward(c, v))
}

fn head(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(3, 1);
    check_block(seed, |s, i| PredictHead::new(s, i, &cfg), &branch_shapes(&cfg, 8), |b, c, v| Ok(vec![b.forward(c, v)?]))
}

fn network(seed: u64) -> Result<GradCheckReport> {
    let cfg = small(2, 2);
    // two-sample attention statistics are nearly singular; three keep the check smooth
    check_block(seed, |s, i| Network::new(s, i, &cfg), &[vec![3, 1, 4, 4]], |b, c, v| Ok(vec![b.forward(c, v[0])?]))
}

type BlockCheck = fn(u64) -> Result<GradCheckReport>;

#[derive(Clone, Copy)]
enum Runner {
    Op(fn(u64) -> sshd_tensor::Result<GradCheckReport>),
    Block(BlockCheck),
}

/// One named gradient check, run once per seed.
#[derive(Clone, Copy)]
pub struct SuiteCase {
    pub name: &'static str,
    runner: Runner,
}

impl SuiteCase {
    pub fn is_block(&self) -> bool {
        matches!(self.runner, Runner::Block(_))
    }

    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        match self.runner {
            Runner::Op(f) => Ok(f(seed)?),
            Runner::Block(f) => f(seed),
        }
    }
}

/// Every tensor op followed by every block.
pub fn suite_cases() -> Vec<SuiteCase> {
    let mut cases: Vec<SuiteCase> = op_cases().into_iter().map(|c| SuiteCase { name: c.name, runner: Runner::Op(c.run) }).collect();
    let blocks: [(&'static str, BlockCheck); 9] = [
        ("residual_block", residual),
        ("odconv", odconv),
        ("coord_attention", coord_attention),
        ("odblock", odblock),
        ("hcem_2x4", hcem),
        ("dcfm", dcfm),
        ("hmrm", hmrm),
        ("head", head),
        ("network", network),
    ];
    cases.extend(blocks.into_iter().map(|(name, f)| SuiteCase { name, runner: Runner::Block(f) }));
    cases
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseSummary {
    pub name: String,
    pub seeds: u64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_nonsmooth: usize,
    pub passed: bool,
}

/// Runs `filter` (a case name, or every case for `None` / `"all"`) over
/// seeds `0..seeds`.
pub fn run_suite(filter: Option<&str>, seeds: u64, tol: f64) -> Result<Vec<CaseSummary>> {
    let cases: Vec<SuiteCase> = suite_cases().into_iter().filter(|c| matches!(filter, None | Some("all")) || filter == Some(c.name)).collect();
    if cases.is_empty() {
        let names: Vec<&str> = suite_cases().iter().map(|c| c.name).collect();
        return Err(CoreError::Usage(format!("unknown gradient check {:?}; known: all, {}", filter.unwrap_or(""), names.join(", "))));
    }
    cases
        .iter()
        .map(|c| {
            let mut total = GradCheckReport::default();
            let mut passed = true;
            for seed in 0..seeds {
                let r = c.run(seed)?;
                passed &= r.passes(tol);
                total.merge(&r);
            }
            Ok(CaseSummary {
                name: c.name.to_string(),
                seeds,
                max_rel_err: total.max_rel_err,
                checked: total.checked,
                skipped_nonsmooth: total.skipped_nonsmooth,
                passed,
            })
        })
        .collect()
}
