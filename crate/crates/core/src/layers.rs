//! Parameterized primitives: convolution, batch norm, fully connected.

use sshd_tensor::{Real, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::params::{BufferId, Ctx, Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// Square `k×k` convolution with "same" padding at stride 1.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool) -> Self {
        let fan_in = cin * k * k;
        let kernel = store.add_param(format!("{name}.weight"), init.fan_in(&[cout, cin, k, k], fan_in));
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), init.fan_in(&[cout], fan_in)));
        Self { kernel, bias, stride, padding: k / 2 }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let k = ctx.param(self.kernel);
        let b = self.bias.map(|b| ctx.param(b));
        Ok(ctx.tape.conv2d(x, k, b, self.stride, self.padding)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, cfg: &ModelConfig) -> Self {
        let gamma = store.add_param(format!("{name}.gamma"), Tensor::ones(vec![channels]));
        let beta = store.add_param(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        let mut stats = Tensor::zeros(vec![2, channels]);
        stats.data_mut()[channels..].fill(T::one());
        let stats = store.add_buffer(format!("{name}.running"), stats);
        Self { gamma, beta, stats, momentum: cfg.bn_momentum, eps: cfg.bn_eps }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        ctx.batch_norm(x, self.gamma, self.beta, self.stats, self.momentum, self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(fin)`; bias, when present, starts at zero.
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, fin: usize, fout: usize, bias: bool) -> Self {
        let weight = store.add_param(format!("{name}.weight"), init.fan_in(&[fout, fin], fin));
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(vec![fout])));
        Self { weight, bias }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        Ok(ctx.tape.linear(x, w, b)?)
    }
}

/// Convolution followed by batch norm, optionally rectified.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        cfg: &ModelConfig,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        relu: bool,
    ) -> Self {
        let conv = Conv::new(store, init, &format!("{name}.conv"), cin, cout, k, stride, false);
        let bn = BatchNorm::new(store, &format!("{name}.bn"), cout, cfg);
        Self { conv, bn, relu }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        if self.relu {
            Ok(ctx.tape.relu(y)?)
        } else {
            Ok(y)
        }
    }
}
