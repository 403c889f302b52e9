//! Named parameter collections and the `RSL-CKPT-1` checkpoint format.
//!
//! Layout: the ASCII header `RSL-CKPT-1\n`, a little-endian `u64` byte length
//! of the JSON index, the JSON index itself, then every parameter as
//! little-endian `f32` values in index order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_HEADER: &str = "RSL-CKPT-1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointIndex {
    format: String,
    params: Vec<IndexEntry>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends a parameter and returns its position.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub fn write_checkpoint(
        &self,
        w: &mut impl Write,
        meta: BTreeMap<String, serde_json::Value>,
    ) -> Result<()> {
        let mut offset = 0;
        let params = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                let e = IndexEntry {
                    name: n.clone(),
                    offset,
                    shape: t.shape().to_vec(),
                };
                offset += t.numel();
                e
            })
            .collect();
        let index = CheckpointIndex {
            format: CHECKPOINT_HEADER.to_string(),
            params,
            meta,
        };
        let json = serde_json::to_vec(&index)?;
        let mut buf = Vec::with_capacity(32 + json.len() + 4 * offset);
        buf.extend_from_slice(CHECKPOINT_HEADER.as_bytes());
        buf.push(b'\n');
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint(
        r: &mut impl Read,
    ) -> Result<(Self, BTreeMap<String, serde_json::Value>)> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let head = CHECKPOINT_HEADER.len() + 1;
        if bytes.len() < head + 8 || &bytes[..head - 1] != CHECKPOINT_HEADER.as_bytes() {
            return Err(Error::Format("missing RSL-CKPT-1 header".into()));
        }
        let len = u64::from_le_bytes(bytes[head..head + 8].try_into().unwrap()) as usize;
        let json_end = head + 8 + len;
        if bytes.len() < json_end {
            return Err(Error::Format("truncated checkpoint index".into()));
        }
        let index: CheckpointIndex = serde_json::from_slice(&bytes[head + 8..json_end])?;
        if index.format != CHECKPOINT_HEADER {
            return Err(Error::Format(format!("unsupported format {}", index.format)));
        }
        let blob = &bytes[json_end..];
        let mut store = ParamStore::new();
        for e in index.params {
            let n: usize = e.shape.iter().product();
            let start = e.offset * 4;
            let end = start + n * 4;
            if end > blob.len() {
                return Err(Error::Format(format!("parameter {} out of bounds", e.name)));
            }
            let data = blob[start..end]
                .chunks_exact(4)
                .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
                .collect();
            store.push(e.name, Tensor::new(e.shape, data)?);
        }
        Ok((store, index.meta))
    }

    pub fn save(&self, path: &Path, meta: BTreeMap<String, serde_json::Value>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f, meta)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, BTreeMap<String, serde_json::Value>)> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_checkpoint(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            a in proptest::collection::vec(-1e6f32..1e6, 1..40),
            b in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 6),
        ) {
            let mut s = ParamStore::<f32>::new();
            s.push("a", Tensor::new(vec![a.len()], a.clone()).unwrap());
            s.push("blk.0.w", Tensor::new(vec![2, 3], b.clone()).unwrap());
            let mut buf = Vec::new();
            s.write_checkpoint(&mut buf, BTreeMap::new()).unwrap();
            prop_assert!(buf.starts_with(b"RSL-CKPT-1\n"));
            let (back, _) = ParamStore::<f32>::read_checkpoint(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, s);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let junk = b"NOT-A-CKPT....".to_vec();
        assert!(ParamStore::<f32>::read_checkpoint(&mut junk.as_slice()).is_err());
    }
}
