//! Named parameter storage and its flat binary serialization.
//!
//! On disk a store is two files: a little-endian `f64` blob holding every
//! tensor concatenated in name-sorted order, and a JSON sidecar listing
//! `{name, shape, offset}` per tensor (offset in bytes).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gradients, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parameters(params: impl IntoIterator<Item = Parameter>) -> Result<Self> {
        let mut store = Self::new();
        for p in params {
            store.insert(p.name, p.tensor)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Argument(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// All tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of scalars that receive gradients.
    pub fn trainable_count(&self) -> usize {
        self.tensors.values().filter(|t| t.requires_grad).map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    /// Copy the gradients of every parameter recorded on `tape` into the store.
    pub fn set_grads(&mut self, tape: &Tape, grads: &Gradients) {
        self.zero_grads();
        for (name, g) in tape.named_grads(grads) {
            if let Some(t) = self.tensors.get_mut(name) {
                match &mut t.grad {
                    Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e += v),
                    slot @ None => *slot = Some(g.to_vec()),
                }
            }
        }
    }

    /// Serialize values; returns the blob and its sidecar entries.
    pub fn to_flat(&self) -> (Vec<u8>, Vec<ParamEntry>) {
        let mut bytes = Vec::with_capacity(8 * self.tensors.values().map(Tensor::numel).sum::<usize>());
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: bytes.len(),
            });
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        (bytes, entries)
    }

    /// Build a store (no tensor requires gradients) from a blob and its sidecar.
    pub fn from_flat(bytes: &[u8], entries: &[ParamEntry]) -> Result<Self> {
        let mut store = Self::new();
        for e in entries {
            let n: usize = e.shape.iter().product();
            let end = e.offset + 8 * n;
            if end > bytes.len() {
                return Err(Error::Argument(format!(
                    "parameter {} needs bytes {}..{end}, blob has {}",
                    e.name,
                    e.offset,
                    bytes.len()
                )));
            }
            let data = bytes[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        }
        Ok(store)
    }

    /// Overwrite values from `other`, which must have identical names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        let mine: Vec<_> = self.tensors.iter().map(|(k, t)| (k, t.shape())).collect();
        let theirs: Vec<_> = other.tensors.iter().map(|(k, t)| (k, t.shape())).collect();
        if mine != theirs {
            return Err(Error::Argument(
                "parameter layout differs from the expected layout".to_string(),
            ));
        }
        for (name, t) in self.tensors.iter_mut() {
            t.data_mut().copy_from_slice(other.tensors[name].data());
        }
        Ok(())
    }

    pub fn save(&self, bin_path: &Path, json_path: &Path) -> Result<()> {
        let (bytes, entries) = self.to_flat();
        fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
        let json = serde_json::to_string_pretty(&entries)?;
        fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;
        Ok(())
    }

    pub fn load(bin_path: &Path, json_path: &Path) -> Result<Self> {
        let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        let json = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let entries: Vec<ParamEntry> =
            serde_json::from_str(&json).map_err(|e| Error::format(json_path, e.to_string()))?;
        Self::from_flat(&bytes, &entries).map_err(|e| Error::format(bin_path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(vec![1])).unwrap();
        assert!(s.insert("a", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn entries_are_name_sorted_with_byte_offsets() {
        let mut s = ParamStore::new();
        s.insert("z.w", Tensor::zeros(vec![2, 2])).unwrap();
        s.insert("a.b", Tensor::zeros(vec![3])).unwrap();
        let (bytes, entries) = s.to_flat();
        assert_eq!(bytes.len(), 7 * 8);
        assert_eq!(entries[0].name, "a.b");
        assert_eq!(entries[0].offset, 0);
        assert_eq!(entries[1].name, "z.w");
        assert_eq!(entries[1].offset, 24);
    }

    proptest! {
        #[test]
        fn flat_round_trip_is_bit_exact(values in proptest::collection::vec(-1e300f64..1e300, 1..40), split in 1usize..39) {
            let split = split.min(values.len());
            let mut s = ParamStore::new();
            s.insert("p.first", Tensor::new(vec![split], values[..split].to_vec()).unwrap()).unwrap();
            if split < values.len() {
                s.insert("p.second", Tensor::new(vec![values.len() - split], values[split..].to_vec()).unwrap()).unwrap();
            }
            let (bytes, entries) = s.to_flat();
            let back = ParamStore::from_flat(&bytes, &entries).unwrap();
            for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
                let abits: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
