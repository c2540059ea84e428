//! Heatmap dumps: 8-bit PGM for viewing, raw f32 for exact inspection.

use std::path::Path;

use crate::data::pgm::{encode_pgm, Pgm};
use crate::error::{io_err, CoreError, Result};
use crate::head::Heatmap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapFormat {
    Pgm,
    /// u32 height, u32 width (little-endian), then row-major f32.
    Raw,
}

impl std::str::FromStr for HeatmapFormat {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(Self::Pgm),
            "raw" => Ok(Self::Raw),
            _ => Err(CoreError::Usage(format!("unknown heatmap format {s:?} (pgm|raw)"))),
        }
    }
}

/// `round(v·255)` with halves rounded up.
pub fn encode_heatmap_pgm(hm: &Heatmap) -> Vec<u8> {
    let samples = hm.values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u16).collect();
    encode_pgm(&Pgm { width: hm.width, height: hm.height, maxval: 255, samples })
}

pub fn encode_raw_heatmap(hm: &Heatmap) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * hm.values.len());
    out.extend_from_slice(&(hm.height as u32).to_le_bytes());
    out.extend_from_slice(&(hm.width as u32).to_le_bytes());
    for &v in &hm.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw_heatmap(bytes: &[u8], path: &str) -> Result<Heatmap> {
    let fmt = |offset, detail: &str| CoreError::Format { path: path.to_string(), offset, detail: detail.to_string() };
    if bytes.len() < 8 {
        return Err(fmt(bytes.len(), "truncated header"));
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if h == 0 || w == 0 {
        return Err(fmt(0, "zero extent"));
    }
    if (bytes.len() - 8) != h * w * 4 {
        return Err(fmt(8, "payload length does not match extents"));
    }
    let values = bytes[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Heatmap::new(h, w, values)
}

pub fn dump_heatmap(hm: &Heatmap, path: &Path, format: HeatmapFormat) -> Result<()> {
    let bytes = match format {
        HeatmapFormat::Pgm => encode_heatmap_pgm(hm),
        HeatmapFormat::Raw => encode_raw_heatmap(hm),
    };
    std::fs::write(path, bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pgm::decode_pgm;

    #[test]
    fn half_rounds_up_to_128() {
        let hm = Heatmap::new(2, 3, vec![0.5; 6]).unwrap();
        let pgm = decode_pgm(&encode_heatmap_pgm(&hm), "t").unwrap();
        assert!(pgm.samples.iter().all(|&s| s == 128));
        let zero = decode_pgm(&encode_heatmap_pgm(&Heatmap::zeros(3, 3)), "t").unwrap();
        assert!(zero.samples.iter().all(|&s| s == 0));
    }

    #[test]
    fn raw_roundtrip() {
        let hm = Heatmap::new(2, 2, vec![0.0, 0.25, 0.1f32 as f64, 1.0]).unwrap();
        assert_eq!(decode_raw_heatmap(&encode_raw_heatmap(&hm), "t").unwrap(), hm);
        assert!(decode_raw_heatmap(&encode_raw_heatmap(&hm)[..10], "t").is_err());
    }
}
