//! Ablation suites: a decode-only λ sweep and retraining sweeps over width
//! and cross-branch/fusion topology.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Topology, TrainConfig};
use crate::data::Sample;
use crate::error::{CoreError, Result};
use crate::head::{AnmsConfig, Heatmap, PointLabel};
use crate::infer::{evaluate, score_heatmaps};
use crate::metrics::{MatchRule, MetricsReport};
use crate::model::build_model;
use crate::train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lambda,
    Width,
    Topology,
}

impl FromStr for Suite {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "width" => Ok(Self::Width),
            "topology" => Ok(Self::Topology),
            _ => Err(CoreError::Usage(format!("unknown ablation suite {s:?} (lambda|width|topology)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<usize>,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Fixed-width text table, metrics in percent.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}  {:>5}  {:>5}  {:>5}  {:>9}\n", "variant", "Pre", "Rec", "F1", "TP", "FP", "FN", "params");
        for r in &self.rows {
            let m = &r.metrics;
            let params = r.params.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.2}  {:>8.2}  {:>8.2}  {:>5}  {:>5}  {:>5}  {:>9}",
                r.label,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                m.counts.tp,
                m.counts.fp,
                m.counts.fn_,
                params
            );
        }
        out
    }
}

/// λ = 0.05, 0.10, …, 0.55.
pub fn lambda_grid() -> Vec<f64> {
    (1..=11).map(|i| (i * 5) as f64 / 100.0).collect()
}

/// Re-decodes a fixed set of heatmaps at every λ of [`lambda_grid`].
pub fn lambda_sweep(maps: &[Heatmap], labels: &[&[PointLabel]], tau: f64, rule: MatchRule) -> AblationReport {
    let rows = lambda_grid()
        .into_iter()
        .map(|lambda| AblationRow {
            label: format!("lambda={lambda:.2}"),
            lambda: Some(lambda),
            params: None,
            metrics: score_heatmaps(maps, labels, &AnmsConfig { lambda, tau }, rule),
        })
        .collect();
    AblationReport { suite: "lambda".into(), rows }
}

pub fn width_variants(base: &ModelConfig, widths: &[usize]) -> Vec<(String, ModelConfig)> {
    widths.iter().map(|&w| (format!("W{w}"), ModelConfig { width_mult: w, ..base.clone() })).collect()
}

/// The four extraction-module wirings followed by the fusion-module removals.
pub fn topology_variants(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let with = |topology| ModelConfig { topology, ..base.clone() };
    vec![
        ("parallel".into(), with(Topology::Parallel)),
        ("top_down".into(), with(Topology::TopDown)),
        ("bottom_up".into(), with(Topology::BottomUp)),
        ("full".into(), with(Topology::Full)),
        ("no_dcfm_first".into(), ModelConfig { dcfm_first: false, ..with(Topology::Full) }),
        ("no_dcfm_second".into(), ModelConfig { dcfm_second: false, ..with(Topology::Full) }),
        ("no_dcfm".into(), ModelConfig { dcfm_first: false, dcfm_second: false, ..with(Topology::Full) }),
    ]
}

/// Trains every variant from scratch on `train_set` (retaining the best
/// validation checkpoint) and scores it on `test_set`.
pub fn run_variants(
    suite: &str,
    variants: &[(String, ModelConfig)],
    train_set: &[&Sample],
    val_set: &[&Sample],
    test_set: &[&Sample],
    tc: &TrainConfig,
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(variants.len());
    for (label, cfg) in variants {
        log::info!("ablation {suite}: training {label}");
        let mut model = build_model::<f32>(cfg)?;
        train(&mut model, train_set, val_set, tc, None)?;
        let anms = AnmsConfig { lambda: cfg.lambda, tau: cfg.tau };
        let (metrics, _) = evaluate(&mut model, test_set, &anms, MatchRule::default())?;
        rows.push(AblationRow { label: label.clone(), lambda: None, params: Some(model.store.param_count()), metrics });
    }
    Ok(AblationReport { suite: suite.into(), rows })
}
