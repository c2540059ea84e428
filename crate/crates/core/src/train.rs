//! Optimizers, flip augmentation and the training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sshd_tensor::{Real, Tensor, TensorError};

use crate::config::{ModelConfig, OptimizerKind, RunConfig, TrainConfig};
use crate::data::{checkpoint_save, Image, Sample, TensorTable};
use crate::error::{config, io_err, CoreError, Result};
use crate::head::{make_gt_heatmap, mse_loss, AnmsConfig, Heatmap, PointLabel};
use crate::infer::{evaluate, pad_image};
use crate::metrics::{MatchRule, MetricsReport};
use crate::model::Model;
use crate::params::{Ctx, Mode, ParamStore};

/// Horizontal flips mirror columns, vertical flips mirror rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flip {
    pub horizontal: bool,
    pub vertical: bool,
}

impl Flip {
    pub fn point(self, p: PointLabel, height: usize, width: usize) -> PointLabel {
        PointLabel {
            x: if self.horizontal { width - 1 - p.x } else { p.x },
            y: if self.vertical { height - 1 - p.y } else { p.y },
        }
    }

    /// Flips a row-major `height × width` grid.
    pub fn grid<V: Copy>(self, values: &[V], height: usize, width: usize) -> Vec<V> {
        let mut out = Vec::with_capacity(values.len());
        for y in 0..height {
            let sy = if self.vertical { height - 1 - y } else { y };
            let row = &values[sy * width..(sy + 1) * width];
            if self.horizontal {
                out.extend(row.iter().rev());
            } else {
                out.extend_from_slice(row);
            }
        }
        out
    }

    pub fn image(self, im: &Image) -> Image {
        Image::new(im.height, im.width, self.grid(&im.pixels, im.height, im.width))
    }

    pub fn heatmap(self, hm: &Heatmap) -> Heatmap {
        Heatmap { height: hm.height, width: hm.width, values: self.grid(&hm.values, hm.height, hm.width) }
    }

    pub fn points(self, points: &[PointLabel], height: usize, width: usize) -> Vec<PointLabel> {
        points.iter().map(|&p| self.point(p, height, width)).collect()
    }
}

/// Image, labels and mask flipped together.
pub fn flip_sample(s: &Sample, f: Flip) -> Sample {
    let (h, w) = (s.image.height, s.image.width);
    Sample {
        id: s.id.clone(),
        image: f.image(&s.image),
        labels: f.points(&s.labels, h, w),
        mask: s.mask.as_ref().map(|m| crate::metrics::Mask::new(h, w, f.grid(&m.bits, h, w))),
    }
}

/// Adam or SGD with momentum; moment estimates are kept in 64-bit.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    momentum: f64,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<T: Real>(tc: &TrainConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.value(id).numel()]).collect();
        let second = if tc.optimizer == OptimizerKind::Adam { zeros.clone() } else { Vec::new() };
        Self {
            kind: tc.optimizer,
            lr: tc.learning_rate,
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.adam_eps,
            momentum: tc.momentum,
            steps: 0,
            first: zeros,
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = store.value_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (w, gj)) in p.iter_mut().zip(g.data()).enumerate() {
                        let gj = gj.as_f64();
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                        let upd = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                        *w = T::lit(w.as_f64() - upd);
                    }
                }
                OptimizerKind::Sgd => {
                    let vel = &mut self.first[i];
                    for (j, (w, gj)) in p.iter_mut().zip(g.data()).enumerate() {
                        vel[j] = self.momentum * vel[j] + gj.as_f64();
                        *w = T::lit(w.as_f64() - self.lr * vel[j]);
                    }
                }
            }
        }
    }
}

/// Forward, MSE against `gt`, backward and one optimizer update. Returns the
/// loss before the update.
pub fn train_step<T: Real>(model: &mut Model<T>, opt: &mut Optimizer, x: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    let step = opt.steps() as usize;
    let non_finite = |e: CoreError| match e {
        CoreError::Tensor(TensorError::NonFinite { .. }) => CoreError::NonFiniteLoss { step },
        e => e,
    };
    let mut ctx = Ctx::new(&mut model.store, Mode::Train, true);
    let xv = ctx.tape.constant(x.clone());
    let gv = ctx.tape.constant(gt.clone());
    let y = model.net.forward(&mut ctx, xv).map_err(non_finite)?;
    let loss = mse_loss(&mut ctx, y, gv).map_err(non_finite)?;
    let value = ctx.tape.value(loss).item().map_or(f64::NAN, |v| v.as_f64());
    if !value.is_finite() {
        return Err(CoreError::NonFiniteLoss { step });
    }
    ctx.tape.backward(loss).map_err(|e| non_finite(e.into()))?;
    let grads = ctx.param_grads();
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(CoreError::NonFiniteLoss { step });
    }
    drop(ctx);
    opt.step(&mut model.store, &grads);
    Ok(value)
}

/// Zero-padded images and their Gaussian targets as `B×1×H×W` tensors.
pub fn training_batch<T: Real>(samples: &[Sample], cfg: &ModelConfig) -> Result<(Tensor<T>, Tensor<T>)> {
    let m = cfg.size_multiple();
    let mut images = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        let im = pad_image(&s.image, m);
        let gt = make_gt_heatmap(&s.labels, im.height, im.width, cfg.sigma_g).map_err(|e| match e {
            CoreError::Label { line, detail, .. } => CoreError::Label { sample: s.id.clone(), line, detail },
            e => e,
        })?;
        images.push(im);
        gts.push(gt);
    }
    let (h, w) = (images[0].height, images[0].width);
    if images.iter().any(|im| (im.height, im.width) != (h, w)) {
        return Err(config("a training batch mixes image sizes; resize the dataset to one extent"));
    }
    let n = images.len();
    let x = Tensor::new(vec![n, 1, h, w], images.iter().flat_map(|im| im.pixels.iter().map(|&v| T::lit(v as f64))).collect())?;
    let y = Tensor::new(vec![n, 1, h, w], gts.iter().flat_map(|g| g.values.iter().map(|&v| T::lit(v))).collect())?;
    Ok((x, y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1: Option<f64>,
    /// Parameters and buffers of the retained checkpoint.
    pub best: TensorTable,
}

/// Output files written by [`train`] under its output directory.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn history(&self) -> PathBuf {
        self.dir.join("history.json")
    }
}

fn write_history(files: &RunFiles, history: &[EpochRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(history).map_err(|source| CoreError::Json { path: files.history(), source })?;
    std::fs::write(files.history(), text).map_err(io_err(files.history()))
}

/// Trains `model` in place and leaves it holding the retained checkpoint.
///
/// Every `eval_every` epochs the validation split is decoded with the model's
/// λ/τ and matched at radius 5; the parameters with the best F1 so far (ties
/// keep the earlier epoch) are retained. Without validation the final
/// parameters are retained. With `out`, `config.json` is written up front and
/// `best.ckpt`, `last.ckpt` and `history.json` as training proceeds. A
/// non-finite loss aborts; `last.ckpt` then holds the last finite parameters.
pub fn train<T: Real>(model: &mut Model<T>, train_set: &[&Sample], val_set: &[&Sample], tc: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(config("training split is empty"));
    }
    let files = out.map(|d| RunFiles { dir: d.to_path_buf() });
    if let Some(f) = &files {
        std::fs::create_dir_all(&f.dir).map_err(io_err(&f.dir))?;
        let run = RunConfig { model: model.cfg.clone(), train: tc.clone() };
        std::fs::write(f.config(), run.to_json()).map_err(io_err(f.config()))?;
    }
    if train_set.len() % tc.batch_size == 1 && tc.batch_size > 1 {
        log::warn!("the last batch of every epoch holds a single sample; batch statistics will be degenerate");
    }
    let anms = AnmsConfig { lambda: model.cfg.lambda, tau: model.cfg.tau };
    let mut opt = Optimizer::new(tc, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, TensorTable)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tc.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let s = train_set[i];
                    if tc.flip_augment {
                        flip_sample(s, Flip { horizontal: rng.gen(), vertical: rng.gen() })
                    } else {
                        s.clone()
                    }
                })
                .collect();
            let (x, gt) = training_batch::<T>(&batch, &model.cfg)?;
            let before = model.store.to_table();
            match train_step(model, &mut opt, &x, &gt) {
                Ok(loss) => total += loss * chunk.len() as f64,
                Err(e @ CoreError::NonFiniteLoss { .. }) => {
                    if let Some(f) = &files {
                        checkpoint_save(&before, &f.last())?;
                        write_history(f, &history)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = total / train_set.len() as f64;
        let evaluate_now = tc.eval_every > 0 && epoch % tc.eval_every == 0 && !val_set.is_empty();
        let val = if evaluate_now { Some(evaluate(model, val_set, &anms, MatchRule::default())?.0) } else { None };
        if let Some(r) = &val {
            if best.as_ref().is_none_or(|(f1, _, _)| r.f1 > *f1) {
                best = Some((r.f1, epoch, model.store.to_table()));
                if let Some(f) = &files {
                    checkpoint_save(&best.as_ref().expect("just set").2, &f.best())?;
                }
            }
        }
        history.push(EpochRecord { epoch, train_loss, val, seconds: started.elapsed().as_secs_f64() });
        log::info!(
            "epoch {epoch}/{}: loss {train_loss:.6}{}",
            tc.epochs,
            val.map(|r| format!(", val P {:.4} R {:.4} F1 {:.4}", r.precision, r.recall, r.f1)).unwrap_or_default()
        );
        if let Some(f) = &files {
            if tc.checkpoint_every > 0 && (epoch % tc.checkpoint_every == 0 || epoch == tc.epochs) {
                checkpoint_save(&model.store.to_table(), &f.last())?;
            }
            write_history(f, &history)?;
        }
    }
    let (best_f1, best_epoch, table) = match best {
        Some((f1, e, t)) => (Some(f1), e, t),
        None => (None, tc.epochs, model.store.to_table()),
    };
    if best_f1.is_none() {
        if let Some(f) = &files {
            checkpoint_save(&table, &f.best())?;
        }
    }
    model.store.load_table(&table)?;
    Ok(TrainOutcome { history, best_epoch, best_f1, best: table })
}
