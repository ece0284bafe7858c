//! Named parameter tables and their binary checkpoint format.
//!
//! Layout, little-endian: `b"PRNG"`, version `u32`, count `u32`, then per
//! entry: name length `u32`, UTF-8 name, rank `u32`, dims `u32 * rank`,
//! `f64` payload.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PRNG";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered, name-addressed parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        if let Some(&i) = self.index.get(name) {
            self.values[i] = value;
            return;
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
    }

    /// Uniform Glorot initialization for a `fan_in x fan_out` matrix.
    pub fn insert_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) {
        let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
        self.insert(name, Tensor::from_vec(&[fan_in, fan_out], data).expect("shape"));
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Entries whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            if n.starts_with(prefix) {
                out.insert(n, v.clone());
            }
        }
        out
    }

    /// Copies every entry of `other` in, replacing same-named entries.
    pub fn merge(&mut self, other: &ParamStore) {
        for (n, v) in other.names.iter().zip(&other.values) {
            self.insert(n, v.clone());
        }
    }

    /// Order-sensitive FNV-1a digest over names, shapes, and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (n, v) in self.names.iter().zip(&self.values) {
            eat(n.as_bytes());
            for &d in v.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for &x in v.data() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Puts every parameter on the tape.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    g.variable(v.clone())
                } else {
                    g.constant(v.clone())
                }
            })
            .collect();
        Binding {
            index: self.index.clone(),
            vars,
        }
    }

    /// Gradients of every bound parameter, zero where none flowed.
    pub fn collect_grads(&self, g: &Graph, b: &Binding) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(&b.vars)
            .map(|(v, &var)| g.grad(var).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.numel());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (n, v) in self.names.iter().zip(&self.values) {
            buf.extend_from_slice(&(n.len() as u32).to_le_bytes());
            buf.extend_from_slice(n.as_bytes());
            buf.extend_from_slice(&(v.shape().len() as u32).to_le_bytes());
            for &d in v.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in v.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("missing PRNG header".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(&name, Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after parameter table".into());
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsio::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    /// Loads a checkpoint that must match `expected` entry for entry.
    pub fn load_matching(path: &Path, expected: &ParamStore) -> Result<Self> {
        let store = Self::load(path)?;
        for (n, v) in expected.names.iter().zip(&expected.values) {
            match store.get(n) {
                None => return Err(Error::format(path, format!("missing parameter {n}"))),
                Some(t) if t.shape() != v.shape() => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter {n}: checkpoint {:?}, model {:?}",
                        t.shape(),
                        v.shape()
                    )))
                }
                _ => {}
            }
        }
        if store.len() != expected.len() {
            return Err(Error::format(path, "checkpoint has unexpected parameters"));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err("truncated checkpoint".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parameter handles on one tape.
pub struct Binding {
    index: BTreeMap<String, usize>,
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }
}
