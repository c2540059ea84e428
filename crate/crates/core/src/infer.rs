//! Inference: padding to valid extents, batched prediction, decoding,
//! detection files and evaluation against point labels.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sshd_tensor::Real;

use crate::config::{load_run_config, ModelConfig};
use crate::data::{checkpoint_load, Image, Sample};
use crate::error::{config, io_err, CoreError, Result};
use crate::head::{anms, AnmsConfig, Detection, Heatmap, PointLabel};
use crate::metrics::{compute_prf, match_with, MatchCounts, MatchRule, MetricsReport};
use crate::model::{batch_tensor, build_model, Model};

/// Images per forward pass during inference.
pub const EVAL_BATCH: usize = 16;

/// Zero-pads the bottom and right edges up to the next multiple of `multiple`.
pub fn pad_image(im: &Image, multiple: usize) -> Image {
    let h = im.height.div_ceil(multiple) * multiple;
    let w = im.width.div_ceil(multiple) * multiple;
    if (h, w) == (im.height, im.width) {
        return im.clone();
    }
    let mut out = Image::zeros(h, w);
    for y in 0..im.height {
        out.pixels[y * w..y * w + im.width].copy_from_slice(&im.pixels[y * im.width..(y + 1) * im.width]);
    }
    out
}

/// Eval-mode heatmaps in the images' original extents. Inputs are padded to
/// the model's size multiple; consecutive images of equal size share a batch.
pub fn predict_heatmaps<T: Real>(model: &mut Model<T>, images: &[&Image]) -> Result<Vec<Heatmap>> {
    let m = model.cfg.size_multiple();
    let padded: Vec<Image> = images.iter().map(|im| pad_image(im, m)).collect();
    let mut out = Vec::with_capacity(images.len());
    let mut start = 0;
    while start < padded.len() {
        let dims = (padded[start].height, padded[start].width);
        let mut end = start + 1;
        while end < padded.len() && end - start < EVAL_BATCH && (padded[end].height, padded[end].width) == dims {
            end += 1;
        }
        let refs: Vec<&Image> = padded[start..end].iter().collect();
        let maps = model.predict(&batch_tensor::<T>(&refs)?)?;
        for (hm, im) in maps.iter().zip(&images[start..end]) {
            out.push(hm.crop(im.height, im.width));
        }
        start = end;
    }
    Ok(out)
}

/// Detections (highest score first) and the heatmap for each image.
pub fn detect<T: Real>(model: &mut Model<T>, images: &[&Image], cfg: &AnmsConfig) -> Result<Vec<(Vec<Detection>, Heatmap)>> {
    let maps = predict_heatmaps(model, images)?;
    Ok(maps.into_iter().map(|hm| (anms(&hm, cfg), hm)).collect())
}

/// Pooled target-level metrics over `samples`, plus the predicted heatmaps.
pub fn evaluate<T: Real>(model: &mut Model<T>, samples: &[&Sample], cfg: &AnmsConfig, rule: MatchRule) -> Result<(MetricsReport, Vec<Heatmap>)> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let maps = predict_heatmaps(model, &images)?;
    let mut counts = MatchCounts::default();
    for (s, hm) in samples.iter().zip(&maps) {
        counts += match_with(&anms(hm, cfg), &s.labels, rule);
    }
    Ok((compute_prf(counts), maps))
}

/// Pooled metrics for heatmaps decoded at `cfg` against per-image labels.
pub fn score_heatmaps(maps: &[Heatmap], labels: &[&[PointLabel]], cfg: &AnmsConfig, rule: MatchRule) -> MetricsReport {
    let mut counts = MatchCounts::default();
    for (hm, gt) in maps.iter().zip(labels) {
        counts += match_with(&anms(hm, cfg), gt, rule);
    }
    compute_prf(counts)
}

/// One line of a detections file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub id: String,
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

pub fn records_for(id: &str, dets: &[Detection]) -> Vec<DetectionRecord> {
    dets.iter().map(|d| DetectionRecord { id: id.to_string(), x: d.x, y: d.y, score: d.score }).collect()
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|source| CoreError::Json { path: path.to_path_buf(), source })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads JSON lines; blank lines are skipped.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            let r = serde_json::from_str(&line).map_err(|e| CoreError::Format {
                path: path.display().to_string(),
                offset: offset + e.column().saturating_sub(1),
                detail: e.to_string(),
            })?;
            out.push(r);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Matches detection records against labels per image id and pools the
/// counts. Images with labels but no detections count their targets as
/// misses; detections for an unknown id are a usage error.
pub fn evaluate_records(records: &[DetectionRecord], labels: &BTreeMap<String, Vec<PointLabel>>, rule: MatchRule) -> Result<MetricsReport> {
    let mut per_image: BTreeMap<&str, Vec<Detection>> = labels.keys().map(|k| (k.as_str(), Vec::new())).collect();
    for r in records {
        per_image
            .get_mut(r.id.as_str())
            .ok_or_else(|| CoreError::Usage(format!("detection for unknown image id {:?}", r.id)))?
            .push(Detection { x: r.x, y: r.y, score: r.score });
    }
    let mut counts = MatchCounts::default();
    for (id, dets) in &per_image {
        counts += match_with(dets, &labels[*id], rule);
    }
    Ok(compute_prf(counts))
}

/// `config.json` in the checkpoint's directory.
pub fn config_beside(ckpt: &Path) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join("config.json")
}

/// Builds the model described by `cfg` and fills it from `ckpt`; without
/// `cfg`, the model settings are read from `config.json` beside the checkpoint.
pub fn load_model<T: Real>(ckpt: &Path, cfg: Option<&ModelConfig>) -> Result<Model<T>> {
    let cfg = match cfg {
        Some(c) => c.clone(),
        None => {
            let path = config_beside(ckpt);
            if !path.exists() {
                return Err(config(format!("no model configuration given and {} does not exist", path.display())));
            }
            load_run_config(&path)?.model
        }
    };
    let mut model = build_model::<T>(&cfg)?;
    model.store.load_table(&checkpoint_load(ckpt)?)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_keeps_the_top_left_window() {
        let im = Image::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let p = pad_image(&im, 4);
        assert_eq!((p.height, p.width), (4, 4));
        assert_eq!(p.get(2, 1), 0.6);
        assert_eq!(p.get(3, 3), 0.0);
        assert_eq!(pad_image(&p, 4), p);
    }

    #[test]
    fn records_roundtrip_and_unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let recs = vec![
            DetectionRecord { id: "a".into(), x: 3, y: 4, score: 0.9 },
            DetectionRecord { id: "b".into(), x: 1, y: 1, score: 0.25 },
        ];
        write_detections(&path, &recs).unwrap();
        assert_eq!(read_detections(&path).unwrap(), recs);

        let mut labels = BTreeMap::new();
        labels.insert("a".to_string(), vec![PointLabel { x: 0, y: 0 }]);
        labels.insert("b".to_string(), vec![]);
        labels.insert("c".to_string(), vec![PointLabel { x: 9, y: 9 }]);
        let r = evaluate_records(&recs, &labels, MatchRule::default()).unwrap();
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_), (1, 1, 1));
        let strict = evaluate_records(&recs, &labels, MatchRule { radius: 5.0, inclusive: false }).unwrap();
        assert_eq!(strict.counts.tp, 0);
        labels.remove("b");
        assert!(evaluate_records(&recs, &labels, MatchRule::default()).is_err());
    }
}
