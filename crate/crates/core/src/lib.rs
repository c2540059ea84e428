//! Single-point-supervised infrared small-target detection: network blocks,
//! heatmap supervision and decoding, evaluation, data formats and the
//! training and inference runner.

// `!(x > 0.0)` checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablate;
pub mod blocks;
pub mod config;
pub mod data;
pub mod dcfm;
pub mod error;
pub mod gradsuite;
pub mod hcem;
pub mod head;
pub mod hmrm;
pub mod infer;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod threads;
pub mod train;

pub use config::{ModelConfig, OptimizerKind, RunConfig, SynthConfig, Topology, TrainConfig};
pub use error::{CoreError, Result};
pub use head::{anms, make_gt_heatmap, mse_loss, AnmsConfig, Detection, Heatmap, PointLabel};
pub use metrics::{cluster_mask, compute_prf, mask_to_points, match_detections, match_with, Mask, MatchCounts, MatchRule, MetricsReport};
pub use infer::{detect, evaluate, load_model, pad_image, predict_heatmaps, DetectionRecord};
pub use model::{batch_tensor, build_model, Model, Network};
pub use params::{Ctx, Init, Mode, ParamId, ParamStore};
pub use sshd_tensor;
pub use train::{flip_sample, train, train_step, Flip, Optimizer, TrainOutcome};
