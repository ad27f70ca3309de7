//! Named parameter collections and their binary file format.
//!
//! File layout: magic `GGP1`, then one record per tensor in sorted name
//! order: name length (u32 LE), name bytes, rank (u32 LE), dims (u32 LE
//! each), values (f64 LE).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GGP1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Tape leaves for every tensor of a store.
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Gradient per parameter; parameters off the output's path get zeros.
    pub fn collect(&self, grads: &Gradients, like: &ParamStore) -> ParamStore {
        let mut out = ParamStore::default();
        for (name, var) in &self.vars {
            let t = grads
                .get(*var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(like.get(name).expect("bound from this store").shape()));
            out.insert(name.clone(), t);
        }
        out
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

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

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect(),
        }
    }

    /// Bind every tensor as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect(),
        }
    }

    /// Bind every tensor as a constant (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|(k, v)| (k.clone(), tape.constant(v.clone()))).collect(),
        }
    }

    /// All values concatenated in sorted name order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParamStore::flatten`] using this store's layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamStore> {
        if flat.len() != self.count() {
            return Err(Error::DimMismatch {
                context: "unflatten",
                expected: self.count(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        let mut out = ParamStore::default();
        for (k, v) in &self.tensors {
            let n = v.len();
            out.insert(k.clone(), Tensor::new(v.shape().to_vec(), flat[at..at + n].to_vec())?);
            at += n;
        }
        Ok(out)
    }

    /// Deep copy; later updates to `self` never touch the snapshot.
    pub fn snapshot(&self) -> ParamStore {
        self.clone()
    }

    pub fn restore(&mut self, snapshot: &ParamStore) {
        self.tensors.clone_from(&snapshot.tensors);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(4 + self.count() * 8);
        buf.extend_from_slice(MAGIC);
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut store = ParamStore::default();
        while !r.is_empty() {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
            let rank = read_u32(&mut r)? as usize;
            let dims = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            store.insert(name, Tensor::new(dims, values)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamStore> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ParamStore::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("truncated parameter file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
