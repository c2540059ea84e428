//! On-disk datasets: `images/<id>.pgm`, `labels/<id>.csv`, optional
//! `masks/<id>.pgm` and a `split.json` manifest.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::labels::{format_labels, parse_labels};
use crate::data::pgm::{encode_pgm, quantize, read_image, read_mask, Image, Pgm};
use crate::error::{io_err, CoreError, Result};
use crate::head::PointLabel;
use crate::metrics::Mask;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub labels: Vec<PointLabel>,
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Seeded shuffle of `ids` divided 6:2:2.
    pub fn random(ids: &[String], seed: u64) -> Self {
        let n = ids.len();
        let train = (n * 6 + 5) / 10;
        let val = ((n * 2 + 5) / 10).min(n - train);
        Self::with_counts(ids, seed, train, val)
    }

    /// Seeded shuffle with explicit train and validation sizes; the rest is test.
    pub fn with_counts(ids: &[String], seed: u64, train: usize, val: usize) -> Self {
        let mut ids = ids.to_vec();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let val_end = (train + val).min(ids.len());
        let train_end = train.min(val_end);
        Self { train: ids[..train_end].to_vec(), val: ids[train_end..val_end].to_vec(), test: ids[val_end..].to_vec() }
    }

    pub fn get(&self, split: &str) -> Result<&[String]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(CoreError::Usage(format!("unknown split {split:?} (train|val|test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: SplitManifest,
}

impl Dataset {
    /// Samples of one split, in manifest order.
    pub fn split(&self, name: &str) -> Result<Vec<&Sample>> {
        self.split
            .get(name)?
            .iter()
            .map(|id| {
                self.samples
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| CoreError::Label { sample: id.clone(), line: None, detail: format!("listed in {name} split but not present") })
            })
            .collect()
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Image plus labels (missing label file means no targets) and an optional mask.
pub fn load_sample(image_path: &Path, label_path: &Path, mask_path: Option<&Path>) -> Result<Sample> {
    let id = stem(image_path);
    let image = read_image(image_path)?;
    let labels = match std::fs::read_to_string(label_path) {
        Ok(text) => parse_labels(&text, &id, image.width, image.height)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(label_path)(e)),
    };
    let mask = mask_path.map(read_mask).transpose()?;
    if let Some(m) = &mask {
        if (m.height, m.width) != (image.height, image.width) {
            return Err(CoreError::Label {
                sample: id,
                line: None,
                detail: format!("mask is {}×{}, image is {}×{}", m.width, m.height, image.width, image.height),
            });
        }
    }
    Ok(Sample { id, image, labels, mask })
}

/// Sorted `*.pgm` paths in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads a dataset directory. Without `split.json` the manifest is a seeded
/// 6:2:2 split.
pub fn load_dataset_dir(dir: &Path, split_seed: u64) -> Result<Dataset> {
    let masks = dir.join("masks");
    let samples = list_images(&dir.join("images"))?
        .iter()
        .map(|p| {
            let id = stem(p);
            let mask = masks.join(format!("{id}.pgm"));
            load_sample(p, &dir.join("labels").join(format!("{id}.csv")), mask.exists().then_some(mask.as_path()))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = dir.join("split.json");
    let split = if manifest.exists() {
        let text = std::fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        serde_json::from_str(&text).map_err(|source| CoreError::Json { path: manifest.clone(), source })?
    } else {
        SplitManifest::random(&samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>(), split_seed)
    };
    Ok(Dataset { samples, split })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Writes images as 16-bit PGM, labels as CSV, masks when present, and the manifest.
pub fn write_dataset_dir(dir: &Path, samples: &[Sample], split: &SplitManifest) -> Result<()> {
    for sub in ["images", "labels"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io_err(dir.join(sub)))?;
    }
    for s in samples {
        write(&dir.join("images").join(format!("{}.pgm", s.id)), encode_pgm(&quantize(&s.image, u16::MAX)))?;
        write(&dir.join("labels").join(format!("{}.csv", s.id)), format_labels(&s.labels))?;
        if let Some(m) = &s.mask {
            let masks = dir.join("masks");
            std::fs::create_dir_all(&masks).map_err(io_err(&masks))?;
            let pgm = Pgm { width: m.width, height: m.height, maxval: 255, samples: m.bits.iter().map(|&b| if b { 255 } else { 0 }).collect() };
            write(&masks.join(format!("{}.pgm", s.id)), encode_pgm(&pgm))?;
        }
    }
    let json = serde_json::to_string_pretty(split).expect("manifest serializes");
    write(&dir.join("split.json"), json)
}
