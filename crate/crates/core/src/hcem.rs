//! Multi-resolution front end: stem, branch pyramid, cross-branch alignment
//! and the high-resolution cross-feature extraction columns.

use sshd_tensor::{Real, ResizeKind, Var};

use crate::blocks::{expect_channels, ResidualBlock};
use crate::config::{ModelConfig, Topology};
use crate::error::{config, CoreError, Result};
use crate::layers::{BatchNorm, Conv, ConvBn};
use crate::params::{Ctx, Init, ParamStore};

/// Branch `index` (1-based) at `channels` and `height × width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub index: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Branch specs for an input of `height × width`.
pub fn branch_specs(cfg: &ModelConfig, height: usize, width: usize) -> Result<Vec<BranchSpec>> {
    let m = cfg.size_multiple();
    if !height.is_multiple_of(m) || !width.is_multiple_of(m) || height == 0 || width == 0 {
        return Err(config(format!("input {height}×{width} is not divisible by 2^(branches-1) = {m}")));
    }
    Ok((1..=cfg.branches)
        .map(|j| BranchSpec { index: j, channels: cfg.channels(j), height: height >> (j - 1), width: width >> (j - 1) })
        .collect())
}

/// One tensor per branch, highest resolution first.
pub type FeatureSet = Vec<Var>;

#[derive(Clone, Debug)]
pub struct Stem {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl Stem {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) -> Self {
        Self {
            conv: Conv::new(store, init, "stem.conv", 1, cfg.width_mult, 3, 1, true),
            bn: BatchNorm::new(store, "stem.bn", cfg.width_mult, cfg),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, image: Var) -> Result<Var> {
        let shape = ctx.tape.shape(image);
        if shape.len() != 4 || shape[1] != 1 {
            return Err(CoreError::Format {
                path: "<stem input>".into(),
                offset: 0,
                detail: format!("expected a single-channel B×1×H×W image, got {shape:?}"),
            });
        }
        let y = self.conv.forward(ctx, image)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.tape.relu(y)?)
    }
}

/// Branch `j` is reached from the stem output by `j − 1` stride-2 stages,
/// each moving one step up the channel ladder.
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub chains: Vec<Vec<ConvBn>>,
}

impl Pyramid {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) -> Self {
        let chains = (1..=cfg.branches)
            .map(|j| {
                (1..j)
                    .map(|s| ConvBn::new(store, init, cfg, &format!("pyramid.b{j}.s{s}"), cfg.channels(s), cfg.channels(s + 1), 3, 2, true))
                    .collect()
            })
            .collect();
        Self { chains }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, stem: Var) -> Result<FeatureSet> {
        self.chains
            .iter()
            .map(|chain| chain.iter().try_fold(stem, |x, stage| stage.forward(ctx, x)))
            .collect()
    }
}

#[derive(Clone, Debug)]
enum AlignPath {
    Identity,
    Down { stages: Vec<ConvBn>, project: ConvBn },
    Up { project: ConvBn },
}

/// Moves a feature map from one branch to another: stride-2 convolutions
/// downward, bilinear resizing upward, then a 1×1 channel projection.
#[derive(Clone, Debug)]
pub struct Align {
    path: AlignPath,
    pub src: usize,
    pub dst: usize,
}

impl Align {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig, name: &str, src: usize, dst: usize) -> Self {
        let (cs, cd) = (cfg.channels(src), cfg.channels(dst));
        let path = if src == dst {
            AlignPath::Identity
        } else if dst > src {
            let stages = (0..dst - src).map(|s| ConvBn::new(store, init, cfg, &format!("{name}.down{s}"), cs, cs, 3, 2, true)).collect();
            AlignPath::Down { stages, project: ConvBn::new(store, init, cfg, &format!("{name}.project"), cs, cd, 1, 1, false) }
        } else {
            AlignPath::Up { project: ConvBn::new(store, init, cfg, &format!("{name}.project"), cs, cd, 1, 1, false) }
        };
        Self { path, src, dst }
    }

    /// Projection weights, if any (used to sever a link in tests and ablations).
    pub fn projection(&self) -> Option<&ConvBn> {
        match &self.path {
            AlignPath::Identity => None,
            AlignPath::Down { project, .. } | AlignPath::Up { project } => Some(project),
        }
    }

    /// `out_hw` is the destination branch's spatial extent.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var, out_hw: (usize, usize)) -> Result<Var> {
        match &self.path {
            AlignPath::Identity => Ok(x),
            AlignPath::Down { stages, project } => {
                let y = stages.iter().try_fold(x, |x, s| s.forward(ctx, x))?;
                let got = (ctx.tape.shape(y)[2], ctx.tape.shape(y)[3]);
                if got != out_hw {
                    return Err(config(format!("align {}→{}: downsampled to {got:?}, expected {out_hw:?}", self.src, self.dst)));
                }
                project.forward(ctx, y)
            }
            AlignPath::Up { project } => {
                let y = ctx.tape.resize(x, out_hw.0, out_hw.1, ResizeKind::Bilinear)?;
                project.forward(ctx, y)
            }
        }
    }
}

fn hw<T: Real>(ctx: &Ctx<T>, x: Var) -> (usize, usize) {
    let s = ctx.tape.shape(x);
    (s[2], s[3])
}

/// A cross-branch link feeding node `(column, dst)` from branch `src` of the
/// previous column.
#[derive(Clone, Debug)]
pub struct CrossLink {
    pub column: usize,
    pub dst: usize,
    pub src: usize,
    pub align: Align,
}

/// Columns of residual blocks over J branches with stepped cross-branch links.
#[derive(Clone, Debug)]
pub struct Hcem {
    /// `nodes[i][j]`: residual block of column `i + 1`, branch `j + 1`.
    pub nodes: Vec<Vec<ResidualBlock>>,
    pub links: Vec<CrossLink>,
    channels: Vec<usize>,
}

/// Source branch of the cross-term entering `(column, branch)`, both 1-based.
///
/// Links only join the adjacent pairs (1,2) and (2,3); even columns carry
/// high→low, odd columns low→high.
pub fn cross_source(topology: Topology, branches: usize, column: usize, branch: usize) -> Option<usize> {
    if column < 2 {
        return None;
    }
    let even = column.is_multiple_of(2);
    let down = (2..=3).contains(&branch) && branch <= branches;
    let up = (1..=2).contains(&branch) && branch < branches;
    match topology {
        Topology::Parallel => None,
        Topology::Full => {
            if even {
                down.then(|| branch - 1)
            } else {
                up.then(|| branch + 1)
            }
        }
        Topology::TopDown => (even && down).then(|| branch - 1),
        Topology::BottomUp => (!even && up).then(|| branch + 1),
        Topology::Literal => {
            if even {
                down.then(|| branch - 1)
            } else {
                up.then_some(branch)
            }
        }
    }
}

impl Hcem {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) -> Self {
        let mut nodes = Vec::with_capacity(cfg.columns);
        let mut links = Vec::new();
        for i in 1..=cfg.columns {
            for j in 1..=cfg.branches {
                if let Some(src) = cross_source(cfg.topology, cfg.branches, i, j) {
                    let align = Align::new(store, init, cfg, &format!("hcem.c{i}.b{j}.from{src}"), src, j);
                    links.push(CrossLink { column: i, dst: j, src, align });
                }
            }
            nodes.push((1..=cfg.branches).map(|j| ResidualBlock::new(store, init, cfg, &format!("hcem.c{i}.b{j}"), cfg.channels(j))).collect());
        }
        Self { nodes, links, channels: (1..=cfg.branches).map(|j| cfg.channels(j)).collect() }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, inputs: &[Var]) -> Result<FeatureSet> {
        if inputs.len() != self.channels.len() {
            return Err(config(format!("hcem expects {} branches, got {}", self.channels.len(), inputs.len())));
        }
        for (&x, &c) in inputs.iter().zip(&self.channels) {
            expect_channels(ctx, x, c, "hcem")?;
        }
        let mut prev: FeatureSet = inputs.to_vec();
        for (ci, column) in self.nodes.iter().enumerate() {
            let i = ci + 1;
            let mut next = Vec::with_capacity(column.len());
            for (bj, node) in column.iter().enumerate() {
                let j = bj + 1;
                let mut x = prev[bj];
                if let Some(link) = self.links.iter().find(|l| l.column == i && l.dst == j) {
                    let cross = link.align.forward(ctx, prev[link.src - 1], hw(ctx, prev[bj]))?;
                    x = ctx.tape.add(x, cross)?;
                }
                next.push(node.forward(ctx, x)?);
            }
            prev = next;
        }
        Ok(prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_topology_wiring() {
        let t = Topology::Full;
        assert_eq!(cross_source(t, 3, 1, 1), None);
        assert_eq!(cross_source(t, 3, 2, 1), None);
        assert_eq!(cross_source(t, 3, 2, 2), Some(1));
        assert_eq!(cross_source(t, 3, 2, 3), Some(2));
        assert_eq!(cross_source(t, 3, 3, 1), Some(2));
        assert_eq!(cross_source(t, 3, 3, 2), Some(3));
        assert_eq!(cross_source(t, 3, 3, 3), None);
        // only the (1,2) and (2,3) pairs are linked
        assert_eq!(cross_source(t, 4, 2, 4), None);
        assert_eq!(cross_source(t, 4, 3, 3), None);
        assert_eq!(cross_source(t, 1, 2, 1), None);
    }

    #[test]
    fn partial_topologies_are_subsets() {
        for i in 1..=6 {
            for j in 1..=3 {
                let full = cross_source(Topology::Full, 3, i, j);
                assert_eq!(cross_source(Topology::Parallel, 3, i, j), None);
                for t in [Topology::TopDown, Topology::BottomUp] {
                    if let Some(s) = cross_source(t, 3, i, j) {
                        assert_eq!(Some(s), full);
                    }
                }
                if i % 2 == 1 && full.is_some() {
                    assert_eq!(cross_source(Topology::Literal, 3, i, j), Some(j));
                }
            }
        }
    }

    #[test]
    fn specs_follow_width_convention() {
        let cfg = ModelConfig { width_mult: 32, ..ModelConfig::default() };
        let specs = branch_specs(&cfg, 64, 64).unwrap();
        assert_eq!(specs.iter().map(|s| s.channels).collect::<Vec<_>>(), [32, 64, 96]);
        assert_eq!(specs.iter().map(|s| s.height).collect::<Vec<_>>(), [64, 32, 16]);
        assert!(branch_specs(&cfg, 30, 64).is_err());
    }
}
