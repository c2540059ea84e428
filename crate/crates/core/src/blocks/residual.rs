use sshd_tensor::{Real, Var};

use super::expect_channels;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::layers::{BatchNorm, Conv};
use crate::params::{Ctx, Init, ParamStore};

/// `X + BN(Conv(relu(BN(Conv(X)))))` with two 3×3 convolutions.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    channels: usize,
}

impl ResidualBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig, name: &str, channels: usize) -> Self {
        Self {
            conv1: Conv::new(store, init, &format!("{name}.conv1"), channels, channels, 3, 1, false),
            bn1: BatchNorm::new(store, &format!("{name}.bn1"), channels, cfg),
            conv2: Conv::new(store, init, &format!("{name}.conv2"), channels, channels, 3, 1, false),
            bn2: BatchNorm::new(store, &format!("{name}.bn2"), channels, cfg),
            channels,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        expect_channels(ctx, x, self.channels, "residual block")?;
        let y = self.conv1.forward(ctx, x)?;
        let y = self.bn1.forward(ctx, y)?;
        let y = ctx.tape.relu(y)?;
        let y = self.conv2.forward(ctx, y)?;
        let y = self.bn2.forward(ctx, y)?;
        Ok(ctx.tape.add(x, y)?)
    }
}
