//! Heatmap supervision and decoding: Gaussian ground truth, MSE loss, the
//! 1×1 prediction head and adaptive non-maximal suppression.

use serde::{Deserialize, Serialize};
use sshd_tensor::{Real, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{config, CoreError, Result};
use crate::hcem::Align;
use crate::layers::Conv;
use crate::params::{Ctx, Init, ParamStore};

/// Pixel coordinate, `x` = column and `y` = row, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointLabel {
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Single-channel map with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(config(format!("heatmap {height}×{width} needs {} values, got {}", height * width, values.len())));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Splits a `B×1×H×W` tensor into one heatmap per sample.
    pub fn from_batch<T: Real>(t: &Tensor<T>) -> Result<Vec<Heatmap>> {
        let (b, c, h, w) = t.dims4()?;
        if c != 1 {
            return Err(config(format!("heatmap batch must have one channel, got {c}")));
        }
        Ok(t.data().chunks(h * w).take(b).map(|p| Heatmap { height: h, width: w, values: p.iter().map(|v| v.as_f64()).collect() }).collect())
    }

    /// Crops to the top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Heatmap {
        let values = (0..height).flat_map(|y| self.values[y * self.width..y * self.width + width].iter().copied()).collect();
        Heatmap { height, width, values }
    }
}

/// Per-target Gaussians `exp(−((x−kx)² + (y−ky)²) / 2σ²)` combined by
/// elementwise maximum.
pub fn make_gt_heatmap(points: &[PointLabel], height: usize, width: usize, sigma: f64) -> Result<Heatmap> {
    if !(sigma > 0.0) {
        return Err(config("sigma_g must be positive"));
    }
    let mut hm = Heatmap::zeros(height, width);
    let denom = 2.0 * sigma * sigma;
    for (k, p) in points.iter().enumerate() {
        if p.x >= width || p.y >= height {
            return Err(CoreError::Label {
                sample: String::new(),
                line: Some(k + 1),
                detail: format!("point ({}, {}) outside {width}×{height}", p.x, p.y),
            });
        }
        for y in 0..height {
            let dy = y as f64 - p.y as f64;
            for x in 0..width {
                let dx = x as f64 - p.x as f64;
                let g = (-(dx * dx + dy * dy) / denom).exp();
                let v = &mut hm.values[y * width + x];
                if g > *v {
                    *v = g;
                }
            }
        }
    }
    Ok(hm)
}

/// Mean squared error over every pixel of every sample.
pub fn mse_loss<T: Real>(ctx: &mut Ctx<T>, pred: Var, gt: Var) -> Result<Var> {
    if ctx.tape.shape(pred) != ctx.tape.shape(gt) {
        return Err(CoreError::Usage(format!("mse_loss: prediction {:?} vs target {:?}", ctx.tape.shape(pred), ctx.tape.shape(gt))));
    }
    Ok(ctx.tape.mse(pred, gt)?)
}

/// Aligns every branch to branch 1, sums, and maps to one sigmoid channel.
#[derive(Clone, Debug)]
pub struct PredictHead {
    pub aligns: Vec<Align>,
    pub out: Conv,
}

impl PredictHead {
    /// The output convolution starts at zero, so an untrained head predicts 0.5.
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) -> Self {
        let aligns = (1..=cfg.branches).map(|j| Align::new(store, init, cfg, &format!("head.from{j}"), j, 1)).collect();
        let out = Conv::new(store, init, "head.out", cfg.channels(1), 1, 1, 1, true);
        store.value_mut(out.kernel).data_mut().fill(T::zero());
        if let Some(b) = out.bias {
            store.value_mut(b).data_mut().fill(T::zero());
        }
        Self { aligns, out }
    }

    /// Pre-sigmoid logits.
    pub fn logits<T: Real>(&self, ctx: &mut Ctx<T>, features: &[Var]) -> Result<Var> {
        if features.len() != self.aligns.len() {
            return Err(config(format!("head expects {} branches, got {}", self.aligns.len(), features.len())));
        }
        let s = ctx.tape.shape(features[0]);
        let hw = (s[2], s[3]);
        let mut acc = self.aligns[0].forward(ctx, features[0], hw)?;
        for (align, &f) in self.aligns.iter().zip(features).skip(1) {
            let t = align.forward(ctx, f, hw)?;
            acc = ctx.tape.add(acc, t)?;
        }
        self.out.forward(ctx, acc)
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<T>, features: &[Var]) -> Result<Var> {
        let z = self.logits(ctx, features)?;
        Ok(ctx.tape.sigmoid(z)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnmsConfig {
    pub lambda: f64,
    pub tau: f64,
}

impl Default for AnmsConfig {
    fn default() -> Self {
        Self { lambda: 0.25, tau: 0.2 }
    }
}

/// 3×3 stride-1 max filter with −∞ outside the map.
fn max_filter(hm: &Heatmap) -> Vec<f64> {
    let (h, w) = (hm.height, hm.width);
    let mut out = vec![f64::NEG_INFINITY; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::NEG_INFINITY;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    m = m.max(hm.values[yy * w + xx]);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Decodes a heatmap into detections.
///
/// Local maxima (value equal to the 3×3 max filter, strictly positive and at
/// least `tau`) are candidates. A plateau of 8-connected equal-valued
/// candidates keeps only its first pixel in row-major order. With `m` the
/// largest candidate score, candidates scoring at least `m·(1 − lambda)` are
/// returned, highest score first, ties in row-major order.
pub fn anms(hm: &Heatmap, cfg: &AnmsConfig) -> Vec<Detection> {
    let (h, w) = (hm.height, hm.width);
    let maxm = max_filter(hm);
    let v = &hm.values;
    let is_candidate = |i: usize| v[i] == maxm[i] && v[i] > 0.0 && v[i] >= cfg.tau;
    let mut keep = vec![false; h * w];
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || !is_candidate(start) {
            continue;
        }
        // scanning in row-major order, the first pixel reached is the plateau's smallest
        keep[start] = true;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    let j = yy * w + xx;
                    if !seen[j] && v[j] == v[start] && is_candidate(j) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    let m = (0..h * w).filter(|&i| keep[i]).map(|i| v[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut dets: Vec<Detection> = (0..h * w)
        .filter(|&i| keep[i] && m - v[i] <= cfg.lambda * m)
        .map(|i| Detection { x: i % w, y: i / w, score: v[i] })
        .collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    dets
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peaks(h: usize, w: usize, pts: &[(usize, usize, f64)]) -> Heatmap {
        let mut hm = Heatmap::zeros(h, w);
        for &(x, y, s) in pts {
            hm.values[y * w + x] = s;
        }
        hm
    }

    #[test]
    fn gaussian_peak_and_neighbor() {
        let hm = make_gt_heatmap(&[PointLabel { x: 5, y: 5 }], 11, 11, 1.5).unwrap();
        assert_eq!(hm.get(5, 5), 1.0);
        assert!((hm.get(5, 6) - 0.80074).abs() < 1e-5);
        assert_eq!(hm.get(5, 6), (-1.0f64 / 4.5).exp());
    }

    #[test]
    fn duplicate_points_are_idempotent() {
        let p = PointLabel { x: 3, y: 7 };
        let one = make_gt_heatmap(&[p], 10, 12, 1.5).unwrap();
        let two = make_gt_heatmap(&[p, p], 10, 12, 1.5).unwrap();
        assert_eq!(one, two);
        assert!(make_gt_heatmap(&[], 4, 4, 1.5).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_bounds_label_is_rejected() {
        let err = make_gt_heatmap(&[PointLabel { x: 1, y: 1 }, PointLabel { x: 4, y: 0 }], 4, 4, 1.5).unwrap_err();
        assert!(matches!(err, CoreError::Label { line: Some(2), .. }), "{err}");
    }

    #[test]
    fn single_peak() {
        let dets = anms(&peaks(9, 9, &[(4, 4, 0.9)]), &AnmsConfig::default());
        assert_eq!(dets, vec![Detection { x: 4, y: 4, score: 0.9 }]);
    }

    #[test]
    fn relative_suppression_cases() {
        let cfg = AnmsConfig { lambda: 0.25, tau: 0.2 };
        let dets = anms(&peaks(16, 16, &[(2, 2, 0.9), (12, 12, 0.6)]), &cfg);
        assert_eq!(dets.len(), 1);
        assert_eq!((dets[0].x, dets[0].y), (2, 2));
        let dets = anms(&peaks(16, 16, &[(2, 2, 0.9), (12, 12, 0.8)]), &cfg);
        assert_eq!(dets.iter().map(|d| d.score).collect::<Vec<_>>(), [0.9, 0.8]);
    }

    #[test]
    fn plateau_keeps_first_pixel() {
        let dets = anms(&peaks(6, 6, &[(2, 1, 0.7), (3, 1, 0.7), (2, 2, 0.7)]), &AnmsConfig::default());
        assert_eq!(dets, vec![Detection { x: 2, y: 1, score: 0.7 }]);
    }

    #[test]
    fn below_tau_and_empty_maps() {
        assert!(anms(&peaks(5, 5, &[(2, 2, 0.1)]), &AnmsConfig::default()).is_empty());
        assert!(anms(&Heatmap::zeros(5, 5), &AnmsConfig { lambda: 0.25, tau: 0.0 }).is_empty());
    }
}
