//! `CORE` embedding caches. A file is one or more blocks, each: magic,
//! u32 count, u32 dim, u8 kind, `count × dim` f32 rows, then `count` ids as
//! u32-length-prefixed UTF-8.

use std::fs;
use std::path::Path;

use crate::binio::Reader;
use crate::error::{Error, Result};

use super::index::{EmbeddingIndex, IndexKind};

const MAGIC: &[u8; 4] = b"CORE";

pub fn cache_bytes(blocks: &[&EmbeddingIndex]) -> Vec<u8> {
    let mut out = Vec::new();
    for idx in blocks {
        out.extend(MAGIC);
        out.extend((idx.len() as u32).to_le_bytes());
        out.extend((idx.dim() as u32).to_le_bytes());
        out.push(idx.kind().code());
        for x in idx.as_slice() {
            out.extend(x.to_le_bytes());
        }
        for id in idx.ids() {
            out.extend((id.len() as u32).to_le_bytes());
            out.extend(id.as_bytes());
        }
    }
    out
}

pub fn cache_from_bytes(bytes: &[u8]) -> Result<Vec<EmbeddingIndex>> {
    let mut r = Reader::new(bytes);
    let mut blocks = Vec::new();
    while !r.done() || blocks.is_empty() {
        r.magic(MAGIC)?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let kind = IndexKind::from_code(r.u8()?)?;
        let n = count
            .checked_mul(dim)
            .ok_or_else(|| Error::format("embedding block too large"))?;
        let rows = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::format("non-finite embedding value"));
        }
        let ids = (0..count)
            .map(|_| {
                let len = r.u32()? as usize;
                String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("id is not UTF-8"))
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.push(EmbeddingIndex::from_parts(ids, dim, kind, rows).map_err(|e| Error::format(e.to_string()))?);
    }
    Ok(blocks)
}

pub fn write_embeddings(path: &Path, blocks: &[&EmbeddingIndex]) -> Result<()> {
    fs::write(path, cache_bytes(blocks))?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingIndex>> {
    cache_from_bytes(&fs::read(path)?)
}
