//! Omni-dimensional dynamic convolution: the kernel is a per-sample mixture of
//! `n` candidates, reweighted along the kernel, spatial, input-channel and
//! output-channel dimensions by attentions computed from the input.

use sshd_tensor::{Real, Var};

use super::expect_channels;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::layers::{BatchNorm, Linear};
use crate::params::{Ctx, Init, ParamId, ParamStore};

/// Attention hidden width never drops below this.
const MIN_HIDDEN: usize = 16;

#[derive(Clone, Debug)]
pub struct OdConv {
    pub weights: ParamId,
    pub fc: Linear,
    pub bn: BatchNorm,
    pub spatial: Linear,
    pub channel: Linear,
    pub filter: Linear,
    pub kernel: Linear,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub n: usize,
    pub stride: usize,
}

/// Per-sample attentions: `kernel` B×n (softmax), `spatial` B×K×K,
/// `channel` B×Cin, `filter` B×Cout (sigmoid).
#[derive(Clone, Copy, Debug)]
pub struct OdAttention {
    pub kernel: Var,
    pub spatial: Var,
    pub channel: Var,
    pub filter: Var,
}

impl OdConv {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig, name: &str, cin: usize, cout: usize) -> Self {
        let (k, n) = (cfg.od_kernel_size, cfg.od_kernels);
        let hidden = (cin / cfg.r_od).max(MIN_HIDDEN);
        let weights = store.add_param(format!("{name}.weight"), init.fan_in(&[n, cout, cin, k, k], cin * k * k));
        Self {
            weights,
            fc: Linear::new(store, init, &format!("{name}.att.fc"), cin, hidden, false),
            bn: BatchNorm::new(store, &format!("{name}.att.bn"), hidden, cfg),
            spatial: Linear::new(store, init, &format!("{name}.att.spatial"), hidden, k * k, true),
            channel: Linear::new(store, init, &format!("{name}.att.channel"), hidden, cin, true),
            filter: Linear::new(store, init, &format!("{name}.att.filter"), hidden, cout, true),
            kernel: Linear::new(store, init, &format!("{name}.att.kernel"), hidden, n, true),
            cin,
            cout,
            k,
            n,
            stride: 1,
        }
    }

    /// Global average pool → FC → BN → relu → four heads.
    pub fn attention<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<OdAttention> {
        expect_channels(ctx, x, self.cin, "odconv")?;
        let (b, c, h, w) = ctx.tape.value(x).dims4()?;
        let flat = ctx.tape.reshape(x, &[b, c, h * w])?;
        let pooled = ctx.tape.mean_axis(flat, 2)?;
        let pooled = ctx.tape.reshape(pooled, &[b, c])?;
        let z = self.fc.forward(ctx, pooled)?;
        let z = self.bn.forward(ctx, z)?;
        let z = ctx.tape.relu(z)?;

        let s = self.spatial.forward(ctx, z)?;
        let s = ctx.tape.sigmoid(s)?;
        let spatial = ctx.tape.reshape(s, &[b, self.k, self.k])?;
        let ch = self.channel.forward(ctx, z)?;
        let channel = ctx.tape.sigmoid(ch)?;
        let f = self.filter.forward(ctx, z)?;
        let filter = ctx.tape.sigmoid(f)?;
        let kw = self.kernel.forward(ctx, z)?;
        let kernel = ctx.tape.softmax(kw, 1)?;
        Ok(OdAttention { kernel, spatial, channel, filter })
    }

    /// Convolves each sample with its own attention-weighted kernel.
    pub fn apply<T: Real>(&self, ctx: &mut Ctx<T>, x: Var, att: &OdAttention) -> Result<Var> {
        expect_channels(ctx, x, self.cin, "odconv")?;
        let w = ctx.param(self.weights);
        let kernels = ctx.tape.dynamic_kernel(w, att.kernel, att.filter, att.channel, att.spatial)?;
        Ok(ctx.tape.conv2d(x, kernels, None, self.stride, self.k / 2)?)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let att = self.attention(ctx, x)?;
        self.apply(ctx, x, &att)
    }
}
