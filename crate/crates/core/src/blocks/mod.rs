//! Reusable network blocks.

pub mod coord_attention;
pub mod odblock;
pub mod odconv;
pub mod residual;

pub use coord_attention::{CaGates, CoordAttention};
pub use odblock::OdBlock;
pub use odconv::{OdAttention, OdConv};
pub use residual::ResidualBlock;

use sshd_tensor::{Real, Var};

use crate::error::{config, Result};
use crate::params::Ctx;

pub(crate) fn expect_channels<T: Real>(ctx: &Ctx<T>, x: Var, channels: usize, block: &str) -> Result<()> {
    let shape = ctx.tape.shape(x);
    if shape.len() != 4 || shape[1] != channels {
        return Err(config(format!("{block}: expected B×{channels}×H×W input, got {shape:?} (channel dimension mismatch)")));
    }
    Ok(())
}
