//! Independent reference implementations shared by the integration tests and
//! the acceptance run.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use sshd_core::{AnmsConfig, Detection, Heatmap, Mask, PointLabel};

/// Pixel-by-pixel decoder: 8-neighbour local maximality, positive and at
/// least τ, plateaus reduced to their row-major first pixel by label
/// propagation, then the relative rule |v − m| ≤ λ·max(v, m).
pub fn brute_anms(hm: &Heatmap, cfg: &AnmsConfig) -> Vec<Detection> {
    let (h, w) = (hm.height as i64, hm.width as i64);
    let at = |y: i64, x: i64| hm.values[(y * w + x) as usize];
    let neighbours = |y: i64, x: i64| {
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (yy, xx) = (y + dy, x + dx);
                if (dy, dx) != (0, 0) && yy >= 0 && yy < h && xx >= 0 && xx < w {
                    out.push((yy, xx));
                }
            }
        }
        out
    };
    let mut cand = vec![false; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let v = at(y, x);
            let is_max = neighbours(y, x).iter().all(|&(yy, xx)| at(yy, xx) <= v);
            cand[(y * w + x) as usize] = is_max && v > 0.0 && v >= cfg.tau;
        }
    }
    // each candidate repeatedly adopts the smallest index among equal-valued candidate neighbours
    let mut label: Vec<usize> = (0..(h * w) as usize).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if !cand[i] {
                    continue;
                }
                for (yy, xx) in neighbours(y, x) {
                    let j = (yy * w + xx) as usize;
                    if cand[j] && at(yy, xx) == at(y, x) && label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let kept: Vec<usize> = (0..(h * w) as usize).filter(|&i| cand[i] && label[i] == i).collect();
    let m = kept.iter().map(|&i| hm.values[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut dets: Vec<Detection> = kept
        .into_iter()
        .filter(|&i| {
            let v = hm.values[i];
            (v - m).abs() <= cfg.lambda * v.max(m)
        })
        .map(|i| Detection { x: i % hm.width, y: i / hm.width, score: hm.values[i] })
        .collect();
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)));
    dets
}

/// Random map mixing smooth noise, quantized levels (so plateaus and exact
/// ties occur) and isolated peaks.
pub fn random_heatmap(rng: &mut impl Rng, h: usize, w: usize) -> Heatmap {
    let style = rng.gen_range(0..3);
    let mut values: Vec<f64> = (0..h * w)
        .map(|_| match style {
            0 => rng.gen::<f64>(),
            1 => (rng.gen_range(0..6) as f64) / 5.0,
            _ => {
                if rng.gen_bool(0.08) {
                    rng.gen::<f64>()
                } else {
                    0.0
                }
            }
        })
        .collect();
    if rng.gen_bool(0.3) {
        // a flat block of a shared value
        let (y0, x0, v) = (rng.gen_range(0..h - 2), rng.gen_range(0..w - 2), rng.gen::<f64>());
        for y in y0..y0 + 3 {
            for x in x0..x0 + 3 {
                values[y * w + x] = v;
            }
        }
    }
    Heatmap::new(h, w, values).unwrap()
}

/// 8-connected components by breadth-first flood fill, as sorted pixel sets
/// in order of their smallest pixel.
pub fn flood_fill(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            comp.push((y, x));
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = yy * w + xx;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> Mask {
    let p = rng.gen_range(0.05..0.6);
    Mask::new(h, w, (0..h * w).map(|_| rng.gen_bool(p)).collect())
}

/// Gaussian target map evaluated point by point.
pub fn gaussian_oracle(points: &[PointLabel], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            for p in points {
                let d2 = (x as f64 - p.x as f64).powi(2) + (y as f64 - p.y as f64).powi(2);
                out[y * w + x] = out[y * w + x].max((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    out
}

pub fn random_points(rng: &mut impl Rng, h: usize, w: usize, max: usize) -> Vec<PointLabel> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| PointLabel { x: rng.gen_range(0..w), y: rng.gen_range(0..h) }).collect()
}

/// Precision, recall and F1 from their definitions with 0/0 taken as 0.
pub fn prf_oracle(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}
