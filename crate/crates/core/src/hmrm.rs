//! Nested two-stage residual refinement applied per branch:
//! `H1 = L + BN(Conv(relu(BN(Conv(L)))))`,
//! `H2 = L + BN(Conv(relu(BN(Conv(L + H1)))))`.

use sshd_tensor::{Real, Var};

use crate::blocks::expect_channels;
use crate::config::ModelConfig;
use crate::error::{config, Result};
use crate::hcem::FeatureSet;
use crate::layers::{BatchNorm, Conv};
use crate::params::{Ctx, Init, ParamStore};

#[derive(Clone, Debug)]
pub struct RefineStage {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
}

impl RefineStage {
    fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig, name: &str, c: usize) -> Self {
        Self {
            conv1: Conv::new(store, init, &format!("{name}.conv1"), c, c, 3, 1, false),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), c, cfg),
            conv2: Conv::new(store, init, &format!("{name}.conv2"), c, c, 3, 1, false),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), c, cfg),
        }
    }

    /// `BN(Conv(relu(BN(Conv(x)))))`
    fn branch<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(ctx, x)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y)?;
        let y = self.conv2.forward(ctx, y)?;
        self.bn2.forward(ctx, y)
    }
}

#[derive(Clone, Debug)]
pub struct Hmrm {
    /// Per branch: (first stage, second stage).
    pub stages: Vec<(RefineStage, RefineStage)>,
    channels: Vec<usize>,
}

impl Hmrm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) -> Self {
        let channels: Vec<usize> = (1..=cfg.branches).map(|j| cfg.channels(j)).collect();
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let j = i + 1;
                (RefineStage::new(store, init, cfg, &format!("hmrm.b{j}.h1"), c), RefineStage::new(store, init, cfg, &format!("hmrm.b{j}.h2"), c))
            })
            .collect();
        Self { stages, channels }
    }

    /// Returns `(H1, H2)` for one branch.
    pub fn branch<T: Real>(&self, ctx: &mut Ctx<T>, j: usize, l: Var) -> Result<(Var, Var)> {
        expect_channels(ctx, l, self.channels[j], "hmrm")?;
        let (s1, s2) = &self.stages[j];
        let r1 = s1.branch(ctx, l)?;
        let h1 = ctx.tape.add(l, r1)?;
        let inner = ctx.tape.add(l, h1)?;
        let r2 = s2.branch(ctx, inner)?;
        let h2 = ctx.tape.add(l, r2)?;
        Ok((h1, h2))
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, features: &[Var]) -> Result<FeatureSet> {
        if features.len() != self.stages.len() {
            return Err(config(format!("hmrm expects {} branches, got {}", self.stages.len(), features.len())));
        }
        features.iter().enumerate().map(|(j, &l)| Ok(self.branch(ctx, j, l)?.1)).collect()
    }
}
