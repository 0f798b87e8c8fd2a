//! Parameter archives.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "UNFK"  u16 version  u32 count
//! count × { u32 path_len, path (UTF-8), u8 rank, rank × u32 dim, Π dims × f32 }
//! ```
//!
//! Entries are written in ascending path order; loading rejects duplicate or
//! unsorted paths.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"UNFK";
pub const VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serialize every tensor of `store` as `f32`.
pub fn to_bytes<S: Scalar>(store: &ParamStore<S>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(store.len()).map_err(|_| bad("too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    // ParamStore iterates in ascending path order.
    for (path, t) in store.iter() {
        let len = u32::try_from(path.len()).map_err(|_| bad("path too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| bad(format!("`{path}` has rank {}", t.rank())))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(format!("`{path}` dimension {d} too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated archive"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ParamStore<f32>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("bad magic (expected UNFK)"));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut store = ParamStore::new();
    let mut last: Option<String> = None;
    for _ in 0..count {
        let len = c.u32()? as usize;
        let path = std::str::from_utf8(c.take(len)?).map_err(|_| bad("path is not UTF-8"))?.to_string();
        if let Some(prev) = &last {
            if *prev >= path {
                return Err(bad(format!("paths not strictly sorted at `{path}`")));
            }
        }
        let rank = c.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad(format!("`{path}` is too large")))?;
        let bytes = c.take(n.checked_mul(4).ok_or_else(|| bad("payload too large"))?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        store.insert(path.clone(), Tensor::new(dims, data)?)?;
        last = Some(path);
    }
    if c.pos != buf.len() {
        return Err(bad(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(store)
}

pub fn save<S: Scalar>(store: &ParamStore<S>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(store)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

