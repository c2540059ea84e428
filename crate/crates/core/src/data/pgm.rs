//! Binary PGM (P5), 8- or 16-bit big-endian samples.

use std::path::Path;

use crate::error::{io_err, CoreError, Result};
use crate::metrics::Mask;

/// Grayscale image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), height * width, "image size");
        Self { height, width, pixels }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// Raw decoded samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Cursor<'_> {
    fn err(&self, detail: impl Into<String>) -> CoreError {
        CoreError::Format { path: self.path.to_string(), offset: self.pos, detail: detail.into() }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CoreError::Format { path: self.path.to_string(), offset: start, detail: format!("{what} out of range") })
    }
}

/// `path` only labels errors.
pub fn decode_pgm(bytes: &[u8], path: &str) -> Result<Pgm> {
    let mut c = Cursor { bytes, pos: 0, path };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(c.err("bad magic, expected P5"));
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    c.skip_space();
    let max_at = c.pos;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(c.err("zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(CoreError::Format { path: path.to_string(), offset: max_at, detail: format!("maxval {maxval} outside 1..=65535") });
    }
    if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
        return Err(c.err("expected a single whitespace byte before the raster"));
    }
    c.pos += 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = width * height * depth;
    let raster = &bytes[c.pos..];
    if raster.len() < need {
        return Err(CoreError::Format {
            path: path.to_string(),
            offset: bytes.len(),
            detail: format!("raster truncated: need {need} bytes, have {}", raster.len()),
        });
    }
    let samples: Vec<u16> = if depth == 1 {
        raster[..need].iter().map(|&b| b as u16).collect()
    } else {
        raster[..need].chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
        return Err(CoreError::Format { path: path.to_string(), offset: c.pos + i * depth, detail: format!("sample exceeds maxval {maxval}") });
    }
    Ok(Pgm { width, height, maxval: maxval as u16, samples })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval < 256 {
        out.extend(pgm.samples.iter().map(|&s| s as u8));
    } else {
        for s in &pgm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    out
}

fn read(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_pgm(&bytes, &path.display().to_string())
}

/// Samples normalized by maxval.
pub fn read_image(path: &Path) -> Result<Image> {
    let pgm = read(path)?;
    let scale = pgm.maxval as f32;
    Ok(Image::new(pgm.height, pgm.width, pgm.samples.iter().map(|&s| s as f32 / scale).collect()))
}

/// Nonzero samples are foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let pgm = read(path)?;
    Ok(Mask::new(pgm.height, pgm.width, pgm.samples.iter().map(|&s| s != 0).collect()))
}

/// Quantizes `[0, 1]` to `maxval` (255 or 65535) with round-half-up.
pub fn quantize(image: &Image, maxval: u16) -> Pgm {
    let m = maxval as f64;
    let samples = image.pixels.iter().map(|&v| ((v as f64).clamp(0.0, 1.0) * m + 0.5).floor() as u16).collect();
    Pgm { width: image.width, height: image.height, maxval, samples }
}

pub fn write_image(path: &Path, image: &Image, maxval: u16) -> Result<()> {
    std::fs::write(path, encode_pgm(&quantize(image, maxval))).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_maxval_normalizes_to_one() {
        let bytes = encode_pgm(&Pgm { width: 2, height: 1, maxval: 255, samples: vec![255, 0] });
        let pgm = decode_pgm(&bytes, "t").unwrap();
        assert_eq!(pgm.samples, [255, 0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        std::fs::write(&p, &bytes).unwrap();
        assert_eq!(read_image(&p).unwrap().pixels, [1.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 2\n# depth\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4]);
        assert_eq!(decode_pgm(&bytes, "t").unwrap().samples, [1, 2, 3, 4]);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let err = decode_pgm(b"P2\n1 1\n255\n0", "t").unwrap_err();
        assert!(matches!(err, CoreError::Format { offset: 0, .. }));
        let err = decode_pgm(b"P5\n1 1\n0\n\0", "t").unwrap_err();
        assert!(matches!(err, CoreError::Format { offset: 7, .. }), "{err}");
        assert!(decode_pgm(b"P5\n2 2\n255\n\0\0", "t").is_err());
        assert!(decode_pgm(b"P5\n1 1\n70000\n\0\0", "t").is_err());
    }
}
