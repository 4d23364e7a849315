//! `SPHL` binary checkpoints.
//!
//! Layout: magic `SPHL`, `u32` version, `u32` entry count, then per entry
//! `u32` name length, UTF-8 name, `u32` rank and `u64` extents; after the
//! manifest come the little-endian `f64` payloads in manifest order.

use std::path::Path;

use crate::error::{Error, Result};

use super::optim::AdamW;
use super::params::ParamStore;
use super::value::Tensor;

pub const MAGIC: &[u8; 4] = b"SPHL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
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
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, t) in &self.entries {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Format(format!("entry name: {e}")))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            manifest.push((name, shape));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: shape overflow")))?;
            let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn from_params(store: &ParamStore) -> Self {
        Self {
            entries: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    /// Parameters plus optimizer moments and step counter.
    pub fn from_training(store: &ParamStore, opt: &AdamW) -> Self {
        let mut ck = Self::from_params(store);
        let (m, v) = opt.moments();
        for ((name, _), (mi, vi)) in store.iter().zip(m.iter().zip(v)) {
            ck.push(format!("adam.m/{name}"), mi.clone());
            ck.push(format!("adam.v/{name}"), vi.clone());
        }
        ck.push("meta/step", Tensor::scalar(opt.step_count() as f64));
        ck
    }

    /// Copy every parameter of `store` from this checkpoint.
    pub fn load_params(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = self.get(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            store.set(&name, t.clone())?;
        }
        Ok(())
    }

    pub fn load_optimizer(&self, store: &ParamStore, opt: &mut AdamW) -> Result<()> {
        let fetch = |key: String| {
            self.get(&key)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
        };
        let mut m = vec![];
        let mut v = vec![];
        for (name, _) in store.iter() {
            m.push(fetch(format!("adam.m/{name}"))?);
            v.push(fetch(format!("adam.v/{name}"))?);
        }
        let step = fetch("meta/step".into())?.item() as u64;
        opt.restore(m, v, step);
        Ok(())
    }
}
