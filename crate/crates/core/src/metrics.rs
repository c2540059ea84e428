//! Target-level evaluation: point matching, precision/recall/F1, mask
//! clustering and mask-to-point conversion.

use serde::{Deserialize, Serialize};

use crate::head::{Detection, PointLabel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: MatchCounts,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRule {
    pub radius: f64,
    /// Whether a distance of exactly `radius` matches.
    pub inclusive: bool,
}

impl Default for MatchRule {
    fn default() -> Self {
        Self { radius: 5.0, inclusive: true }
    }
}

/// Greedy one-to-one matching within 5 px, boundary inclusive.
pub fn match_detections(preds: &[Detection], gts: &[PointLabel], radius: f64) -> MatchCounts {
    match_with(preds, gts, MatchRule { radius, inclusive: true })
}

/// Predictions in descending score order (ties row-major) each claim the
/// nearest unclaimed ground truth within the radius; distance ties go to the
/// row-major smallest ground truth.
pub fn match_with(preds: &[Detection], gts: &[PointLabel], rule: MatchRule) -> MatchCounts {
    let mut order: Vec<&Detection> = preds.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.y, a.x).cmp(&(b.y, b.x))));
    let r2 = rule.radius * rule.radius;
    let mut claimed = vec![false; gts.len()];
    let mut tp = 0;
    for p in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed[*i])
            .map(|(i, g)| {
                let (dx, dy) = (p.x as f64 - g.x as f64, p.y as f64 - g.y as f64);
                (dx * dx + dy * dy, (g.y, g.x), i)
            })
            .filter(|&(d2, _, _)| if rule.inclusive { d2 <= r2 } else { d2 < r2 })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, _, i)) = best {
            claimed[i] = true;
            tp += 1;
        }
    }
    MatchCounts { tp, fp: preds.len() - tp, fn_: gts.len() - tp }
}

/// Precision, recall and their harmonic mean; every 0/0 is 0.
pub fn compute_prf(c: MatchCounts) -> MetricsReport {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    MetricsReport { precision, recall, f1, counts: c }
}

/// Binary `height × width` mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask size");
        Self { height, width, bits }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// 8-connected components as `(y, x)` pixel lists. Each list is row-major;
/// components are ordered by their first pixel.
pub fn cluster_mask(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height, mask.width);
    // two-pass union-find over the already-visited half of the neighbourhood
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let i = y * w + x;
            let link = |j: usize, parent: &mut Vec<usize>| {
                let (a, b) = (find(parent, i), find(parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            };
            if x > 0 && mask.get(y, x - 1) {
                link(i - 1, &mut parent);
            }
            if y > 0 {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    if mask.get(y - 1, xx) {
                        link((y - 1) * w + xx, &mut parent);
                    }
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; h * w];
    let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
    for i in 0..h * w {
        if !mask.bits[i] {
            continue;
        }
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = out.len();
            out.push(Vec::new());
        }
        out[slot[root]].push((i / w, i % w));
    }
    out
}

/// One point per component: the (intensity-weighted) centroid snapped to the
/// nearest component pixel, ties row-major.
pub fn mask_to_points(mask: &Mask, intensity: Option<&[f64]>) -> Vec<PointLabel> {
    cluster_mask(mask)
        .into_iter()
        .map(|pixels| {
            let weight = |&(y, x): &(usize, usize)| intensity.map_or(1.0, |v| v[y * mask.width + x].max(0.0));
            let mut total: f64 = pixels.iter().map(weight).sum();
            let (mut cy, mut cx) = (0.0, 0.0);
            if total > 0.0 {
                for p in &pixels {
                    let wgt = weight(p);
                    cy += wgt * p.0 as f64;
                    cx += wgt * p.1 as f64;
                }
            } else {
                total = pixels.len() as f64;
                for p in &pixels {
                    cy += p.0 as f64;
                    cx += p.1 as f64;
                }
            }
            let (cy, cx) = (cy / total, cx / total);
            let &(y, x) = pixels
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 as f64 - cy).powi(2) + (a.1 as f64 - cx).powi(2);
                    let db = (b.0 as f64 - cy).powi(2) + (b.1 as f64 - cx).powi(2);
                    da.total_cmp(&db).then(a.cmp(b))
                })
                .expect("components are non-empty");
            PointLabel { x, y }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: usize, y: usize, score: f64) -> Detection {
        Detection { x, y, score }
    }

    fn pt(x: usize, y: usize) -> PointLabel {
        PointLabel { x, y }
    }

    #[test]
    fn radius_boundary() {
        let c = match_detections(&[det(0, 0, 0.9)], &[pt(3, 4)], 5.0);
        assert_eq!(c, MatchCounts { tp: 1, fp: 0, fn_: 0 });
        let c = match_with(&[det(0, 0, 0.9)], &[pt(3, 4)], MatchRule { radius: 5.0, inclusive: false });
        assert_eq!(c, MatchCounts { tp: 0, fp: 1, fn_: 1 });
        let c = match_detections(&[det(0, 0, 0.9)], &[pt(4, 4)], 5.0);
        assert_eq!(c, MatchCounts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn exact_predictions() {
        let gts = [pt(1, 1), pt(10, 3), pt(20, 20)];
        let preds: Vec<_> = gts.iter().map(|g| det(g.x, g.y, 0.5)).collect();
        assert_eq!(match_detections(&preds, &gts, 5.0), MatchCounts { tp: 3, fp: 0, fn_: 0 });
    }

    #[test]
    fn higher_score_claims_first() {
        // both predictions are nearest to the same GT; the stronger one wins it
        let gts = [pt(5, 5)];
        let c = match_detections(&[det(6, 5, 0.4), det(9, 5, 0.8)], &gts, 5.0);
        assert_eq!(c, MatchCounts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn prf_arithmetic() {
        let r = compute_prf(MatchCounts { tp: 3, fp: 1, fn_: 2 });
        assert_eq!((r.precision, r.recall), (0.75, 0.6));
        assert!((r.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
        let r = compute_prf(MatchCounts::default());
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let r = compute_prf(MatchCounts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn report_json_is_flat() {
        let json = serde_json::to_value(compute_prf(MatchCounts { tp: 1, fp: 0, fn_: 1 })).unwrap();
        for key in ["precision", "recall", "f1", "tp", "fp", "fn"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut bits = vec![false; h * w];
        for &(y, x) in on {
            bits[y * w + x] = true;
        }
        Mask::new(h, w, bits)
    }

    #[test]
    fn diagonal_pixels_connect() {
        assert_eq!(cluster_mask(&mask(3, 3, &[(0, 0), (1, 1)])).len(), 1);
        assert_eq!(cluster_mask(&mask(3, 3, &[(0, 0), (0, 2)])).len(), 2);
        // a U shape whose arms only join at the bottom
        let u = mask(3, 3, &[(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2)]);
        assert_eq!(cluster_mask(&u).len(), 1);
    }

    #[test]
    fn square_centroid_and_l_snap() {
        let sq: Vec<_> = (2..5).flat_map(|y| (3..6).map(move |x| (y, x))).collect();
        assert_eq!(mask_to_points(&mask(8, 8, &sq), None), vec![pt(4, 3)]);
        // L: vertical bar x=0, y=0..5 plus horizontal bar y=4, x=0..5
        let mut l: Vec<_> = (0..5).map(|y| (y, 0)).collect();
        l.extend((1..5).map(|x| (4, x)));
        let m = mask(6, 6, &l);
        let p = mask_to_points(&m, None);
        assert_eq!(p.len(), 1);
        assert!(m.get(p[0].y, p[0].x));
        // the centroid (2.89, 1.11) rounds to (3, 1), which is off the shape
        assert!(!m.get(3, 1));
        let uniform = vec![0.7; 36];
        assert_eq!(mask_to_points(&m, Some(&uniform)), p);
        assert!(mask_to_points(&mask(4, 4, &[]), None).is_empty());
    }
}
