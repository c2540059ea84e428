use sshd_tensor::{Real, Var};

use super::{expect_channels, OdConv};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::layers::BatchNorm;
use crate::params::{Ctx, Init, ParamStore};

/// Residual block built from dynamic convolutions:
/// `F + BN(ODConv(relu(BN(ODConv(F)))))`.
#[derive(Clone, Debug)]
pub struct OdBlock {
    pub od1: OdConv,
    pub bn1: BatchNorm,
    pub od2: OdConv,
    pub bn2: BatchNorm,
    channels: usize,
}

impl OdBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig, name: &str, channels: usize) -> Self {
        Self {
            od1: OdConv::new(store, init, cfg, &format!("{name}.od1"), channels, channels),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), channels, cfg),
            od2: OdConv::new(store, init, cfg, &format!("{name}.od2"), channels, channels),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), channels, cfg),
            channels,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, f: Var) -> Result<Var> {
        expect_channels(ctx, f, self.channels, "odblock")?;
        let y = self.od1.forward(ctx, f)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y)?;
        let y = self.od2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        Ok(ctx.tape.add(f, y)?)
    }
}
