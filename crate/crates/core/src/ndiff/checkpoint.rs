//! Versioned key → tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "HMCK"
//! u32    format version
//! u32    header entry count, then (str key, str value) pairs
//! u32    tensor count, then per tensor:
//!        str name, u32 rank, u64 dims[rank], f64 values[product(dims)]
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8. Entries are written in
//! name order so identical models produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::ndiff::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: &Tensor) {
        let stored = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
        self.tensors.insert(name.into(), stored);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::arg(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn header_value(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::arg(format!("checkpoint header has no `{key}` entry")))
    }

    /// Overwrites every `(name, tensor)` from stored values of identical shape.
    pub fn restore_into(&self, params: Vec<(String, &mut Tensor)>) -> Result<()> {
        for (name, t) in params {
            let src = self.get(&name)?;
            if src.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(self.header.len() as u32);
        for (k, v) in &self.header {
            w.str(k);
            w.str(v);
        }
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(t.rank() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.fail("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported checkpoint version {version}")));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            ck.header.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.fail("tensor size overflow"))?;
            let data = r.f64s(numel)?;
            let t = Tensor::new(shape, data).map_err(|e| r.fail(e.to_string()))?;
            ck.tensors.insert(name, t);
        }
        r.finish()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&read_file(path)?, path)
    }
}
