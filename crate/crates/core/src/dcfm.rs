//! Dynamic coordinate fusion: per-branch dynamic-convolution block, all-to-all
//! multi-scale fusion, then per-branch coordinate attention.

use sshd_tensor::{Real, Var};

use crate::blocks::{CoordAttention, OdBlock};
use crate::config::ModelConfig;
use crate::error::{config, Result};
use crate::hcem::{Align, FeatureSet};
use crate::params::{Ctx, Init, ParamStore};

#[derive(Clone, Debug)]
pub struct Dcfm {
    pub odblocks: Option<Vec<OdBlock>>,
    /// `fusion[j][k]` carries branch `k` into branch `j` (identity when equal).
    pub fusion: Vec<Vec<Align>>,
    pub attention: Option<Vec<CoordAttention>>,
    /// Debug hook: replace both attention gates by 1.
    pub force_unit_gates: bool,
}

/// Intermediate results of one pass, for inspection.
#[derive(Clone, Debug)]
pub struct DcfmStages {
    pub blocks: FeatureSet,
    pub fused: FeatureSet,
    pub output: FeatureSet,
}

impl Dcfm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig, name: &str) -> Self {
        let jn = cfg.branches;
        let odblocks = cfg.odblock.then(|| (1..=jn).map(|j| OdBlock::new(store, init, cfg, &format!("{name}.b{j}.odblock"), cfg.channels(j))).collect());
        let fusion = (1..=jn)
            .map(|j| (1..=jn).map(|k| Align::new(store, init, cfg, &format!("{name}.fuse.b{j}.from{k}"), k, j)).collect())
            .collect();
        let attention =
            cfg.coord_attention.then(|| (1..=jn).map(|j| CoordAttention::new(store, init, cfg, &format!("{name}.b{j}.ca"), cfg.channels(j))).collect());
        Self { odblocks, fusion, attention, force_unit_gates: false }
    }

    pub fn stages<T: Real>(&self, ctx: &mut Ctx<T>, features: &[Var]) -> Result<DcfmStages> {
        if features.len() != self.fusion.len() {
            return Err(config(format!("dcfm expects {} branches, got {}", self.fusion.len(), features.len())));
        }
        let blocks: FeatureSet = match &self.odblocks {
            Some(blocks) => features.iter().zip(blocks).map(|(&f, b)| b.forward(ctx, f)).collect::<Result<_>>()?,
            None => features.to_vec(),
        };
        let mut fused = Vec::with_capacity(blocks.len());
        for (j, row) in self.fusion.iter().enumerate() {
            let s = ctx.tape.shape(blocks[j]);
            let hw = (s[2], s[3]);
            let mut acc: Option<Var> = None;
            for (k, align) in row.iter().enumerate() {
                let term = align.forward(ctx, blocks[k], hw)?;
                acc = Some(match acc {
                    Some(a) => ctx.tape.add(a, term)?,
                    None => term,
                });
            }
            fused.push(acc.expect("at least one branch"));
        }
        let output = match (&self.attention, self.force_unit_gates) {
            (Some(ca), false) => fused.iter().zip(ca).map(|(&x, a)| a.forward(ctx, x)).collect::<Result<_>>()?,
            _ => fused.clone(),
        };
        Ok(DcfmStages { blocks, fused, output })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, features: &[Var]) -> Result<FeatureSet> {
        Ok(self.stages(ctx, features)?.output)
    }
}
