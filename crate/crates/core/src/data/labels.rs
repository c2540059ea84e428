//! Point labels: one `x,y` line per target.

use crate::error::{CoreError, Result};
use crate::head::PointLabel;

/// Parses labels for `sample`, checking bounds against `width × height`.
/// Blank lines are ignored.
pub fn parse_labels(text: &str, sample: &str, width: usize, height: usize) -> Result<Vec<PointLabel>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |detail: String| CoreError::Label { sample: sample.to_string(), line: Some(i + 1), detail };
        let (x, y) = line.split_once(',').ok_or_else(|| err(format!("expected \"x,y\", got {line:?}")))?;
        let x: usize = x.trim().parse().map_err(|_| err(format!("bad column {x:?}")))?;
        let y: usize = y.trim().parse().map_err(|_| err(format!("bad row {y:?}")))?;
        if x >= width || y >= height {
            return Err(err(format!("point ({x}, {y}) outside {width}×{height}")));
        }
        out.push(PointLabel { x, y });
    }
    Ok(out)
}

pub fn format_labels(points: &[PointLabel]) -> String {
    points.iter().map(|p| format!("{},{}\n", p.x, p.y)).collect()
}
