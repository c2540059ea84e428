//! Full network assembly: stem → pyramid → HCEM → DCFM → HMRM → DCFM → head.

use sshd_tensor::{Real, Tensor, Var};

use crate::config::ModelConfig;
use crate::data::Image;
use crate::dcfm::Dcfm;
use crate::error::{config, Result};
use crate::hcem::{Hcem, Pyramid, Stem};
use crate::head::{Heatmap, PredictHead};
use crate::hmrm::Hmrm;
use crate::params::{Ctx, Init, Mode, ParamStore};

/// Network structure; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub stem: Stem,
    pub pyramid: Pyramid,
    pub hcem: Hcem,
    pub dcfm_first: Option<Dcfm>,
    pub hmrm: Option<Hmrm>,
    pub dcfm_second: Option<Dcfm>,
    pub head: PredictHead,
}

impl Network {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) -> Self {
        Self {
            stem: Stem::new(store, init, cfg),
            pyramid: Pyramid::new(store, init, cfg),
            hcem: Hcem::new(store, init, cfg),
            dcfm_first: cfg.dcfm_first.then(|| Dcfm::new(store, init, cfg, "dcfm1")),
            hmrm: cfg.hmrm.then(|| Hmrm::new(store, init, cfg)),
            dcfm_second: cfg.dcfm_second.then(|| Dcfm::new(store, init, cfg, "dcfm2")),
            head: PredictHead::new(store, init, cfg),
        }
    }

    /// Pre-sigmoid logits `B×1×H×W` for a `B×1×H×W` image batch.
    pub fn logits<T: Real>(&self, ctx: &mut Ctx<T>, image: Var) -> Result<Var> {
        let x = self.stem.forward(ctx, image)?;
        let mut f = self.pyramid.forward(ctx, x)?;
        f = self.hcem.forward(ctx, &f)?;
        if let Some(d) = &self.dcfm_first {
            f = d.forward(ctx, &f)?;
        }
        if let Some(h) = &self.hmrm {
            f = h.forward(ctx, &f)?;
        }
        if let Some(d) = &self.dcfm_second {
            f = d.forward(ctx, &f)?;
        }
        self.head.logits(ctx, &f)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, image: Var) -> Result<Var> {
        let z = self.logits(ctx, image)?;
        Ok(ctx.tape.sigmoid(z)?)
    }
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub cfg: ModelConfig,
    pub net: Network,
    pub store: ParamStore<T>,
}

/// Validates `cfg` and initializes every parameter from `cfg.seed`.
pub fn build_model<T: Real>(cfg: &ModelConfig) -> Result<Model<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init::new(cfg.seed);
    let net = Network::new(&mut store, &mut init, cfg);
    Ok(Model { cfg: cfg.clone(), net, store })
}

/// Stacks equally sized images into `B×1×H×W`.
pub fn batch_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| config("empty image batch"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if (im.height, im.width) != (h, w) {
            return Err(config(format!("batch mixes {}×{} and {}×{} images", w, h, im.width, im.height)));
        }
        data.extend(im.pixels.iter().map(|&v| T::lit(v as f64)));
    }
    Ok(Tensor::new(vec![images.len(), 1, h, w], data)?)
}

impl<T: Real> Model<T> {
    /// Eval-mode heatmaps for a `B×1×H×W` batch whose extents are valid for the model.
    pub fn predict(&mut self, batch: &Tensor<T>) -> Result<Vec<Heatmap>> {
        let mut ctx = Ctx::new(&mut self.store, Mode::Eval, false);
        let x = ctx.tape.constant(batch.clone());
        let y = self.net.forward(&mut ctx, x)?;
        Heatmap::from_batch(ctx.tape.value(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ModelConfig {
        ModelConfig { input_size: 16, ..ModelConfig::default() }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model::<f32>(&desk()).unwrap();
        let b = build_model::<f32>(&desk()).unwrap();
        assert_eq!(a.store.to_table(), b.store.to_table());
        let c = build_model::<f32>(&ModelConfig { seed: 1, ..desk() }).unwrap();
        assert_ne!(a.store.to_table(), c.store.to_table());
    }

    #[test]
    fn untrained_head_predicts_one_half() {
        let mut m = build_model::<f32>(&desk()).unwrap();
        let hm = m.predict(&Tensor::zeros(vec![1, 1, 16, 16])).unwrap();
        assert_eq!(hm.len(), 1);
        assert!(hm[0].values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn invalid_geometry_fails_before_allocation() {
        assert!(build_model::<f32>(&ModelConfig { input_size: 30, ..ModelConfig::default() }).is_err());
    }
}
