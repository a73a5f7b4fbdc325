//! Binary embedding cache.
//!
//! Layout (little-endian): magic `RGEC`, version u32, dim u32, count u32,
//! then per record: id_len u16, UTF-8 id bytes, dim × f32.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use super::{Embedding, OverlapError};

pub const CACHE_MAGIC: [u8; 4] = *b"RGEC";
pub const CACHE_VERSION: u32 = 1;

pub fn write_embedding_cache(embeddings: &[Embedding], path: impl AsRef<Path>) -> Result<(), OverlapError> {
    let path = path.as_ref();
    let bytes = encode(embeddings)?;
    fs::write(path, bytes).map_err(|e| OverlapError::io(path, e))
}

pub fn read_embedding_cache(path: impl AsRef<Path>) -> Result<Vec<Embedding>, OverlapError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| OverlapError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        OverlapError::Io { source, .. } => OverlapError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

fn encode(embeddings: &[Embedding]) -> Result<Vec<u8>, OverlapError> {
    let dim = embeddings.first().map_or(0, Embedding::dim);
    let mut out = Vec::with_capacity(16 + embeddings.len() * (8 + 4 * dim));
    out.extend_from_slice(&CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(dim).map_err(|_| too_large("dim"))?.to_le_bytes());
    out.extend_from_slice(&u32::try_from(embeddings.len()).map_err(|_| too_large("count"))?.to_le_bytes());
    for e in embeddings {
        if e.dim() != dim {
            return Err(OverlapError::DimensionMismatch {
                expected: dim,
                actual: e.dim(),
            });
        }
        let id = e.image_id.as_bytes();
        out.extend_from_slice(&u16::try_from(id.len()).map_err(|_| too_large("image id"))?.to_le_bytes());
        out.extend_from_slice(id);
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn too_large(what: &str) -> OverlapError {
    OverlapError::BackendFailure {
        subject: "embedding cache".into(),
        message: format!("{what} does not fit the cache format"),
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Embedding>, OverlapError> {
    if bytes.len() < 16 || bytes[..4] != CACHE_MAGIC {
        return Err(OverlapError::MagicMismatch);
    }
    let mut cur = io::Cursor::new(&bytes[4..]);
    let version = read_u32(&mut cur)?;
    if version != CACHE_VERSION {
        return Err(OverlapError::MagicMismatch);
    }
    let dim = read_u32(&mut cur)? as usize;
    let count = read_u32(&mut cur)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut len = [0u8; 2];
        cur.read_exact(&mut len).map_err(eof)?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        cur.read_exact(&mut id).map_err(eof)?;
        let image_id = String::from_utf8(id).map_err(|e| {
            eof(io::Error::new(io::ErrorKind::InvalidData, e))
        })?;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut b = [0u8; 4];
            cur.read_exact(&mut b).map_err(eof)?;
            vector.push(f32::from_le_bytes(b));
        }
        out.push(Embedding { image_id, vector });
    }
    if (cur.position() as usize) != bytes.len() - 4 {
        return Err(eof(io::Error::new(io::ErrorKind::InvalidData, "trailing bytes after last record")));
    }
    Ok(out)
}

fn read_u32(cur: &mut io::Cursor<&[u8]>) -> Result<u32, OverlapError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(eof)?;
    Ok(u32::from_le_bytes(b))
}

fn eof(e: io::Error) -> OverlapError {
    OverlapError::io("<embedding cache>", e)
}
