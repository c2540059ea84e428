//! Coordinate attention: per-row and per-column gates from directional
//! average pooling, passed through a shared 1×1 transform.

use sshd_tensor::{Real, Var};

use super::expect_channels;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::layers::{BatchNorm, Conv};
use crate::params::{Ctx, Init, ParamStore};

const MIN_MIP: usize = 8;

#[derive(Clone, Debug)]
pub struct CoordAttention {
    pub shared: Conv,
    pub bn: BatchNorm,
    pub conv_h: Conv,
    pub conv_w: Conv,
    channels: usize,
    literal_divisor: bool,
}

/// Row gate `h` (B×C×H×1) and column gate `w` (B×C×1×W).
#[derive(Clone, Copy, Debug)]
pub struct CaGates {
    pub h: Var,
    pub w: Var,
}

impl CoordAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig, name: &str, channels: usize) -> Self {
        let mip = (channels / cfg.r_ca).max(MIN_MIP);
        Self {
            shared: Conv::new(store, init, &format!("{name}.shared"), channels, mip, 1, 1, true),
            bn: BatchNorm::new(store, &format!("{name}.bn"), mip, cfg),
            conv_h: Conv::new(store, init, &format!("{name}.conv_h"), mip, channels, 1, 1, true),
            conv_w: Conv::new(store, init, &format!("{name}.conv_w"), mip, channels, 1, 1, true),
            channels,
            literal_divisor: cfg.ca_literal_height_divisor,
        }
    }

    pub fn gates<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<CaGates> {
        expect_channels(ctx, x, self.channels, "coordinate attention")?;
        let (b, c, h, w) = ctx.tape.value(x).dims4()?;
        // z_h: average over the width of each row, B×C×H×1
        let z_h = ctx.tape.mean_axis(x, 3)?;
        // z_w: average over the height of each column, laid out as B×C×W×1
        let mut z_w = ctx.tape.mean_axis(x, 2)?;
        if self.literal_divisor {
            z_w = ctx.tape.mul_scalar(z_w, T::lit(h as f64 / w as f64))?;
        }
        let z_w = ctx.tape.reshape(z_w, &[b, c, w, 1])?;
        let joint = ctx.tape.concat(&[z_h, z_w], 2)?;
        let f = self.shared.forward(ctx, joint)?;
        let f = self.bn.forward(ctx, f)?;
        let f = ctx.tape.relu(f)?;
        let f_h = ctx.tape.slice(f, 2, 0, h)?;
        let f_w = ctx.tape.slice(f, 2, h, w)?;
        let mip = ctx.tape.shape(f)[1];
        let f_w = ctx.tape.reshape(f_w, &[b, mip, 1, w])?;
        let g_h = self.conv_h.forward(ctx, f_h)?;
        let g_h = ctx.tape.sigmoid(g_h)?;
        let g_w = self.conv_w.forward(ctx, f_w)?;
        let g_w = ctx.tape.sigmoid(g_w)?;
        Ok(CaGates { h: g_h, w: g_w })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let g = self.gates(ctx, x)?;
        let y = ctx.tape.mul(x, g.h)?;
        Ok(ctx.tape.mul(y, g.w)?)
    }
}
