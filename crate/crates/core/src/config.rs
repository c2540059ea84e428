//! Model, training and synthetic-data configuration.
//!
//! Every field has a default, so a JSON file only needs the keys it changes.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{config, io_err, CoreError, Result};

/// Cross-branch wiring inside the high-resolution extraction module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// High→low links at even columns, low→high feedback at odd columns.
    Full,
    /// No cross-branch links.
    Parallel,
    /// High→low links only.
    TopDown,
    /// Low→high feedback only.
    BottomUp,
    /// Odd-column cross-term taken from the node's own branch (adds the
    /// previous feature map to itself) instead of the lower-resolution one.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of resolution branches J.
    pub branches: usize,
    /// Residual columns I in the extraction module.
    pub columns: usize,
    /// Branch j carries `j × width_mult` channels.
    pub width_mult: usize,
    pub sigma_g: f64,
    pub lambda: f64,
    pub tau: f64,
    pub r_od: usize,
    pub r_ca: usize,
    /// Candidate kernels per dynamic convolution.
    pub od_kernels: usize,
    pub od_kernel_size: usize,
    /// Nominal square input extent used for validation.
    pub input_size: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub topology: Topology,
    pub dcfm_first: bool,
    pub dcfm_second: bool,
    pub odblock: bool,
    pub coord_attention: bool,
    pub hmrm: bool,
    /// Divide the height-pooled coordinate descriptor by W instead of H.
    pub ca_literal_height_divisor: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            branches: 3,
            columns: 4,
            width_mult: 8,
            sigma_g: 1.5,
            lambda: 0.25,
            tau: 0.2,
            r_od: 4,
            r_ca: 8,
            od_kernels: 4,
            od_kernel_size: 3,
            input_size: 64,
            seed: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            topology: Topology::Full,
            dcfm_first: true,
            dcfm_second: true,
            odblock: true,
            coord_attention: true,
            hmrm: true,
            ca_literal_height_divisor: false,
        }
    }
}

impl ModelConfig {
    pub fn channels(&self, branch: usize) -> usize {
        branch * self.width_mult
    }

    /// Input extents must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.branches - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("branches", self.branches),
            ("columns", self.columns),
            ("width_mult", self.width_mult),
            ("r_od", self.r_od),
            ("r_ca", self.r_ca),
            ("od_kernels", self.od_kernels),
            ("input_size", self.input_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config(format!("{name} must be >= 1")));
            }
        }
        if self.branches > 8 {
            return Err(config(format!("branches = {} is beyond the supported 8", self.branches)));
        }
        if self.od_kernel_size.is_multiple_of(2) {
            return Err(config(format!("od_kernel_size must be odd, got {}", self.od_kernel_size)));
        }
        if !self.input_size.is_multiple_of(self.size_multiple()) {
            return Err(config(format!(
                "input_size {} is not divisible by 2^(branches-1) = {}",
                self.input_size,
                self.size_multiple()
            )));
        }
        if !(self.sigma_g > 0.0) {
            return Err(config("sigma_g must be positive"));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(config(format!("lambda must lie in [0, 1), got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(config(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(config("bn_eps must be positive and bn_momentum in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// SGD momentum.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub flip_augment: bool,
    /// Write `last.ckpt` every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Validate every this many epochs (0 disables; the final parameters are kept).
    pub eval_every: usize,
    /// Shuffling and augmentation stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            momentum: 0.9,
            batch_size: 8,
            epochs: 30,
            flip_augment: true,
            checkpoint_every: 1,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(config("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config("epochs and batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(0.0..1.0).contains(&self.momentum) {
            return Err(config("beta1, beta2 and momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub targets_min: usize,
    pub targets_max: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Peak-to-peak size of the linear background ramp.
    pub gradient_scale: f64,
    pub clutter_octaves: usize,
    /// Amplitude of the first value-noise octave; each further octave halves it.
    pub clutter_amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            targets_min: 1,
            targets_max: 3,
            amplitude_min: 0.25,
            amplitude_max: 0.4,
            sigma_min: 0.7,
            sigma_max: 1.5,
            gradient_scale: 0.2,
            clutter_octaves: 3,
            clutter_amplitude: 0.15,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(config("image size must be positive"));
        }
        if self.targets_min > self.targets_max {
            return Err(config("targets_min exceeds targets_max"));
        }
        if !(self.amplitude_min <= self.amplitude_max && self.amplitude_min >= 0.0 && self.amplitude_max <= 0.4) {
            return Err(config("amplitude range must be non-empty within [0, 0.4] so targets stay within [0, 1]"));
        }
        if !(self.sigma_min <= self.sigma_max && self.sigma_min > 0.0) {
            return Err(config("sigma range must be non-empty and positive"));
        }
        if self.noise_std < 0.0 || self.gradient_scale < 0.0 || self.clutter_amplitude < 0.0 {
            return Err(config("noise_std, gradient_scale and clutter_amplitude must be non-negative"));
        }
        Ok(())
    }
}

/// Model and training settings read from one flat JSON object.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn field_names<S: Serialize>(value: &S) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(map)) => map.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let map: Map<String, Value> = serde_json::from_str(text).map_err(|e| config(format!("invalid JSON: {e}")))?;
        let model_keys = field_names(&ModelConfig::default());
        let train_keys = field_names(&TrainConfig::default());
        let (mut model, mut train) = (Map::new(), Map::new());
        for (k, v) in map {
            if model_keys.contains(&k) {
                model.insert(k, v);
            } else if train_keys.contains(&k) {
                train.insert(k, v);
            } else {
                return Err(config(format!("unknown configuration key {k:?}")));
            }
        }
        let model: ModelConfig = serde_json::from_value(Value::Object(model)).map_err(|e| config(e.to_string()))?;
        let train: TrainConfig = serde_json::from_value(Value::Object(train)).map_err(|e| config(e.to_string()))?;
        model.validate()?;
        train.validate()?;
        Ok(Self { model, train })
    }

    pub fn to_json(&self) -> String {
        let mut map = match serde_json::to_value(&self.model) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        if let Ok(Value::Object(t)) = serde_json::to_value(&self.train) {
            map.extend(t);
        }
        serde_json::to_string_pretty(&Value::Object(map)).unwrap_or_default()
    }
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CoreError::Json { path: path.to_path_buf(), source })
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let cfg: ModelConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let cfg: SynthConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    RunConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        TrainConfig::default().validate().unwrap();
        SynthConfig::default().validate().unwrap();
    }

    #[test]
    fn flat_run_config_splits_keys() {
        let cfg = RunConfig::from_json(r#"{"width_mult": 16, "epochs": 3, "topology": "parallel"}"#).unwrap();
        assert_eq!(cfg.model.width_mult, 16);
        assert_eq!(cfg.model.topology, Topology::Parallel);
        assert_eq!(cfg.train.epochs, 3);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"widht_mult": 16}"#).is_err());
        assert!(serde_json::from_str::<SynthConfig>(r#"{"heigth": 3}"#).is_err());
    }

    #[test]
    fn geometry_is_validated() {
        let cfg = ModelConfig { input_size: 30, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { lambda: 1.0, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
