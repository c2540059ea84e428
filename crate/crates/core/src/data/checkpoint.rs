//! Named tensor tables on disk. Little-endian throughout:
//! `"SSHD"`, version u32, count u32, then per tensor a u16 name length,
//! the UTF-8 name, rank u8, rank × u32 extents and f32 data.

use std::path::Path;

use indexmap::IndexMap;
use sshd_tensor::Tensor;

use crate::error::{io_err, CoreError, Result};

pub type TensorTable = IndexMap<String, Tensor<f32>>;

const MAGIC: &[u8; 4] = b"SSHD";
const VERSION: u32 = 1;

fn ckpt_err(field: &'static str, detail: impl Into<String>) -> CoreError {
    CoreError::Checkpoint { field, detail: detail.into() }
}

pub fn encode_checkpoint(table: &TensorTable) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(table.len()).map_err(|_| ckpt_err("tensor count", "too many tensors"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in table {
        if name.is_empty() {
            return Err(ckpt_err("name", "empty tensor name"));
        }
        let len = u16::try_from(name.len()).map_err(|_| ckpt_err("name length", format!("{name} is longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| ckpt_err("rank", format!("{name} has rank {}", t.rank())))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| ckpt_err("extents", format!("{name} extent {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(ckpt_err(field, format!("truncated at byte {} (need {n} more, have {})", self.pos, self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TensorTable> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(ckpt_err("magic", "not an SSHD checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ckpt_err("version", format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut table = TensorTable::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| ckpt_err("name", "invalid UTF-8"))?.to_string();
        if name.is_empty() {
            return Err(ckpt_err("name", "empty tensor name"));
        }
        let rank = r.take(1, "rank")?[0] as usize;
        let shape = (0..rank).map(|_| r.u32("extents").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| ckpt_err("extents", format!("{name}: size overflow")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| ckpt_err("extents", "size overflow"))?, "data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| ckpt_err("extents", format!("{name}: {e}")))?;
        if table.insert(name.clone(), t).is_some() {
            return Err(ckpt_err("name", format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(ckpt_err("length", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(table)
}

pub fn checkpoint_save(table: &TensorTable, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(table)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn checkpoint_load(path: &Path) -> Result<TensorTable> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_twelve_bytes() {
        let bytes = encode_checkpoint(&TensorTable::new()).unwrap();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"SSHD");
        assert!(decode_checkpoint(&bytes).unwrap().is_empty());
    }

    #[test]
    fn truncation_never_yields_a_partial_table() {
        let mut table = TensorTable::new();
        table.insert("a.weight".into(), Tensor::from_f64(vec![2, 2], &[1.0, -2.0, 3.5, 0.25]).unwrap());
        table.insert("b".into(), Tensor::scalar(7.0));
        let bytes = encode_checkpoint(&table).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), table);
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_checkpoint(&extra), Err(CoreError::Checkpoint { field: "length", .. })));
    }

    #[test]
    fn bad_magic_and_version_name_the_field() {
        let mut bytes = encode_checkpoint(&TensorTable::new()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(CoreError::Checkpoint { field: "magic", .. })));
        let mut bytes = encode_checkpoint(&TensorTable::new()).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(CoreError::Checkpoint { field: "version", .. })));
    }
}
