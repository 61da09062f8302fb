//! Named dense tensors and checkpoint maps.
//!
//! A [`TensorMap`] is the in-memory form of a checkpoint: an ordered
//! (lexicographic by name) map of tensor name to [`Tensor`], plus free-form
//! string metadata. Iteration order is deterministic by construction.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

/// Element type of a tensor. Only float checkpoints are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// A dense row-major tensor. `shape == []` denotes a scalar with one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// Element count does not match the product of the shape dimensions.
    ShapeMismatch { expected: usize, actual: usize },
    /// Tensor name empty or already present.
    BadName(String),
    /// Non-finite element in a map not flagged `allow_nonfinite`.
    NonFinite { name: String, index: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { expected, actual } => {
                write!(f, "shape mismatch: shape implies {expected} elements, got {actual}")
            }
            TensorError::BadName(n) => write!(f, "invalid tensor name {n:?}"),
            TensorError::NonFinite { name, index } => {
                write!(f, "non-finite element in tensor {name:?} at index {index}")
            }
        }
    }
}

impl core::error::Error for TensorError {}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = shape_len(&shape);
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch { expected, actual: data.len() });
        }
        Ok(Tensor { shape, data: TensorData::F32(data) })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = shape_len(&shape);
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch { expected, actual: data.len() });
        }
        Ok(Tensor { shape, data: TensorData::F64(data) })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    /// Iterate elements widened to f64, row-major.
    pub fn iter_f64(&self) -> impl Iterator<Item = f64> + '_ {
        let (f32s, f64s) = match &self.data {
            TensorData::F32(v) => (Some(v.iter()), None),
            TensorData::F64(v) => (None, Some(v.iter())),
        };
        f32s.into_iter()
            .flatten()
            .map(|&x| x as f64)
            .chain(f64s.into_iter().flatten().copied())
    }

    /// L2 norm with f64 accumulation regardless of dtype.
    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.iter_f64().map(|x| x * x).sum())
    }

    pub fn index_of_nonfinite(&self) -> Option<usize> {
        self.iter_f64().position(|x| !x.is_finite())
    }

    /// Elementwise map preserving dtype. The closure sees and returns f64;
    /// f32 tensors round the result back to f32.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = match &self.data {
            TensorData::F32(v) => TensorData::F32(v.iter().map(|&x| f(x as f64) as f32).collect()),
            TensorData::F64(v) => TensorData::F64(v.iter().map(|&x| f(x)).collect()),
        };
        Tensor { shape: self.shape.clone(), data }
    }

    /// Elementwise combine with another tensor of identical shape and dtype.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        if self.shape != other.shape || self.dtype() != other.dtype() {
            return Err(TensorError::ShapeMismatch { expected: self.len(), actual: other.len() });
        }
        let data = match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => TensorData::F32(
                a.iter().zip(b).map(|(&x, &y)| f(x as f64, y as f64) as f32).collect(),
            ),
            (TensorData::F64(a), TensorData::F64(b)) => {
                TensorData::F64(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            }
            _ => unreachable!(),
        };
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// Raw little-endian element bytes, as stored on disk.
    pub fn le_bytes(&self) -> Vec<u8> {
        match &self.data {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

/// Metadata key that disables the finiteness check.
pub const ALLOW_NONFINITE_KEY: &str = "allow_nonfinite";

/// An ordered checkpoint: tensor name -> tensor, plus provenance metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    entries: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), TensorError> {
        if name.is_empty() || self.entries.contains_key(name) {
            return Err(TensorError::BadName(name.to_owned()));
        }
        self.entries.insert(name.to_owned(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lexicographic by name.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: &str, value: &str) {
        self.metadata.insert(key.to_owned(), value.to_owned());
    }

    pub fn allows_nonfinite(&self) -> bool {
        self.metadata
            .get(ALLOW_NONFINITE_KEY)
            .is_some_and(|v| v == "1" || v.eq_ignore_ascii_case("true"))
    }

    /// Check map invariants: finiteness of every element unless flagged.
    /// Shape/name invariants hold by construction.
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.allows_nonfinite() {
            return Ok(());
        }
        for (name, t) in self.iter() {
            if let Some(index) = t.index_of_nonfinite() {
                return Err(TensorError::NonFinite { name: name.to_owned(), index });
            }
        }
        Ok(())
    }

    /// SHA-256 over names, dtypes, shapes, and raw element bytes, in map
    /// order. Metadata is excluded so provenance notes do not change the
    /// content identity.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update([match t.dtype() {
                Dtype::F32 => 0u8,
                Dtype::F64 => 1u8,
            }]);
            h.update((t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(&t.le_bytes());
        }
        h.finalize().into()
    }
}

/// One row of [`tensor_summary`].
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub l2_norm: f64,
    pub elements: usize,
}

/// Per-tensor shape/norm report, one row per tensor in map order.
pub fn tensor_summary(m: &TensorMap) -> Vec<SummaryRow> {
    m.iter()
        .map(|(name, t)| SummaryRow {
            name: name.to_owned(),
            shape: t.shape().to_vec(),
            dtype: t.dtype(),
            l2_norm: t.l2_norm(),
            elements: t.len(),
        })
        .collect()
}
