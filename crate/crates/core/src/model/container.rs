//! Versioned little-endian tensor container.
//!
//! ```text
//! magic    b"HTCK"
//! version  u32
//! n_meta   u32,  then n_meta × (key: str, value: str)
//! n_tensor u32,  then n_tensor × (name: str, dtype: u8, rank: u32, dims: rank × u64, payload)
//! digest   32 bytes, SHA-256 of every preceding byte
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8. dtype 1 is f64; the
//! payload is the row-major data.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HTCK";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: ParamStore,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend((s.len() as u32).to_le_bytes());
    buf.extend(s.as_bytes());
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend(MAGIC);
        buf.extend(FORMAT_VERSION.to_le_bytes());
        buf.extend((self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut buf, k);
            put_str(&mut buf, v);
        }
        buf.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            put_str(&mut buf, name);
            buf.push(DTYPE_F64);
            buf.extend((t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend((d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend(v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend(digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Checkpoint("file is too short to be a checkpoint".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("digest mismatch: file is truncated or corrupt".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let mut tensors = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Checkpoint(format!("tensor `{name}` has unknown dtype {dtype}")));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
            tensors.insert(name, t);
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tensor table".into()));
        }
        Ok(Self { meta, tensors })
    }

    /// Write via a temporary sibling and rename, so readers never observe a
    /// half-written file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp-write");
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Hex SHA-256 of the serialized form, used as a checkpoint id.
    pub fn digest(&self) -> String {
        let bytes = self.to_bytes();
        bytes[bytes.len() - 32..].iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}
