//! Versioned binary container for model parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "VDCK"
//! version  u32      1
//! kind     str      e.g. "vae" or "diffusion"
//! schema   str      schema fingerprint (hex SHA-256)
//! meta     str      JSON document with the model's configuration
//! count    u32      number of tensor records
//! record*  name: str, ndim: u32, dims: ndim × u64, data: numel × f64
//! ```
//!
//! `str` is a `u32` byte length followed by UTF-8 bytes. Readers reject
//! trailing bytes, truncated records and non-finite values.

use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VDCK";
pub const VERSION: u32 = 1;

const MAX_NDIM: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub fingerprint: String,
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(kind: &str, fingerprint: &str, meta: String, store: &ParamStore) -> Self {
        let tensors = store
            .iter()
            .map(|(n, t)| {
                let plain = Tensor::new(t.shape().to_vec(), t.values().to_vec()).expect("valid shape");
                (n.to_string(), plain)
            })
            .collect();
        Self {
            kind: kind.to_string(),
            fingerprint: fingerprint.to_string(),
            meta,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.fingerprint);
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {}", version)));
        }
        let kind = r.str()?;
        let fingerprint = r.str()?;
        let meta = r.str()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.str()?;
            let ndim = r.u32()?;
            if ndim > MAX_NDIM {
                return Err(corrupt(&format!("tensor `{}` has {} dimensions", name, ndim)));
            }
            let mut shape = Vec::with_capacity(ndim as usize);
            let mut numel: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?).map_err(|_| corrupt("dimension overflows"))?;
                numel = numel.checked_mul(d).ok_or_else(|| corrupt("tensor size overflows"))?;
                shape.push(d);
            }
            let nbytes = numel.checked_mul(8).ok_or_else(|| corrupt("tensor size overflows"))?;
            let raw = r.take(nbytes)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(&format!("tensor `{}` holds non-finite values", name)));
            }
            let t = Tensor::new(shape, values).map_err(|_| corrupt("tensor shape mismatch"))?;
            tensors.push((name, t));
        }
        if r.at != bytes.len() {
            return Err(corrupt("trailing bytes after last record"));
        }
        Ok(Self {
            kind,
            fingerprint,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint is of `kind` and matches `fingerprint`.
    pub fn expect(&self, kind: &str, fingerprint: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a `{}` checkpoint, found `{}`",
                kind, self.kind
            )));
        }
        if self.fingerprint != fingerprint {
            return Err(Error::Checkpoint(format!(
                "schema fingerprint mismatch: checkpoint {}, schema {}",
                self.fingerprint, fingerprint
            )));
        }
        Ok(())
    }

    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        store.load_values(self.tensors.iter().map(|(n, t)| (n.as_str(), t)))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn corrupt(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| corrupt("truncated checkpoint"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
}
