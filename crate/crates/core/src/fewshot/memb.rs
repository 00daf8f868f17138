//! Embedding exchange files: `MEMB`, u32 count, u32 d, then per record a
//! u32 class id and d f64 values, all little-endian.

use std::io::{Read, Write};

use super::LabeledEmbedding;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MEMB";

pub fn write_embeddings<W: Write>(mut w: W, records: &[LabeledEmbedding<f64>]) -> Result<()> {
    let d = records.first().map_or(0, |r| r.vector.len());
    if let Some(r) = records.iter().find(|r| r.vector.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: r.vector.len(),
        });
    }
    let count = u32::try_from(records.len()).map_err(|_| Error::config("too many embeddings"))?;
    w.write_all(MAGIC)?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for r in records {
        let id = u32::try_from(r.class_id).map_err(|_| Error::config("class id exceeds u32"))?;
        w.write_all(&id.to_le_bytes())?;
        for v in &r.vector {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<Vec<LabeledEmbedding<f64>>> {
    let mut offset = 0u64;
    let mut take = |buf: &mut [u8], what: &str| -> Result<()> {
        r.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(offset, format!("truncated file while reading {what}")),
            _ => Error::Io(e),
        })?;
        offset += buf.len() as u64;
        Ok(())
    };
    let mut magic = [0u8; 4];
    take(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(0, "not an embedding file (bad magic)"));
    }
    let mut word = [0u8; 4];
    take(&mut word, "count")?;
    let count = u32::from_le_bytes(word) as usize;
    take(&mut word, "dimension")?;
    let d = u32::from_le_bytes(word) as usize;

    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut value = [0u8; 8];
    for _ in 0..count {
        take(&mut word, "class id")?;
        let class_id = u32::from_le_bytes(word) as usize;
        let mut vector = Vec::with_capacity(d);
        for _ in 0..d {
            take(&mut value, "embedding value")?;
            vector.push(f64::from_le_bytes(value));
        }
        out.push(LabeledEmbedding { class_id, vector });
    }
    Ok(out)
}
