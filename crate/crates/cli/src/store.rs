//! Checkpoint file IO in the common named-tensor binary layout.
//!
//! Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON
//! header mapping tensor names to `{dtype, shape, data_offsets}` (plus an
//! optional `__metadata__` string map), then the raw little-endian tensor
//! payload. The layout matches the widely used safetensors format, so real
//! published checkpoints load directly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use biasvec_core::{Dtype, Tensor, TensorMap};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensor {name:?}: declared byte span inconsistent with shape and dtype")]
    ShapeMismatch { name: String },
    #[error("tensor {name:?} has unsupported dtype {dtype:?} (only F32/F64 are supported)")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::IoFailure { path: path.display().to_string(), source }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Parse a checkpoint file into an in-memory map, validating shapes and
/// byte spans eagerly.
pub fn load_checkpoint(path: &Path) -> Result<TensorMap, StoreError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 8 {
        return Err(StoreError::MalformedHeader(format!(
            "file {} is too short for a header length",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("slice of 8")) as usize;
    let data_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            StoreError::MalformedHeader(format!("header length {header_len} exceeds file size"))
        })?;
    let header_json = std::str::from_utf8(&bytes[8..data_start])
        .map_err(|e| StoreError::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let header: serde_json::Map<String, serde_json::Value> = serde_json::from_str(header_json)
        .map_err(|e| StoreError::MalformedHeader(format!("header is not a JSON object: {e}")))?;
    let data = &bytes[data_start..];

    let mut map = TensorMap::new();
    for (name, value) in header {
        if name == "__metadata__" {
            let meta: BTreeMap<String, String> = serde_json::from_value(value).map_err(|e| {
                StoreError::MalformedHeader(format!("__metadata__ is not a string map: {e}"))
            })?;
            for (k, v) in meta {
                map.set_metadata(&k, &v);
            }
            continue;
        }
        let entry: HeaderEntry = serde_json::from_value(value).map_err(|e| {
            StoreError::MalformedHeader(format!("entry for tensor {name:?} is malformed: {e}"))
        })?;
        let dtype = match entry.dtype.as_str() {
            "F32" => Dtype::F32,
            "F64" => Dtype::F64,
            other => {
                return Err(StoreError::UnsupportedDtype { name, dtype: other.to_owned() })
            }
        };
        let elems: usize = entry.shape.iter().product();
        let [begin, end] = entry.data_offsets;
        let span_ok = begin <= end
            && end <= data.len()
            && end - begin == elems * dtype.size_bytes();
        if !span_ok {
            return Err(StoreError::ShapeMismatch { name });
        }
        let payload = &data[begin..end];
        let tensor = match dtype {
            Dtype::F32 => {
                let vals: Vec<f32> = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                    .collect();
                Tensor::from_f32(entry.shape, vals)
            }
            Dtype::F64 => {
                let vals: Vec<f64> = payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                Tensor::from_f64(entry.shape, vals)
            }
        }
        .expect("span length checked against shape");
        map.insert(&name, tensor)
            .map_err(|e| StoreError::MalformedHeader(format!("tensor {name:?}: {e}")))?;
    }
    Ok(map)
}

/// Write a checkpoint. Tensors are laid out contiguously in lexicographic
/// name order, so identical maps always produce identical bytes.
pub fn save_checkpoint(map: &TensorMap, path: &Path) -> Result<(), StoreError> {
    map.validate().map_err(|e| StoreError::InvariantViolation(e.to_string()))?;

    let mut header = serde_json::Map::new();
    if !map.metadata().is_empty() {
        header.insert(
            "__metadata__".to_owned(),
            serde_json::to_value(map.metadata()).expect("string map serializes"),
        );
    }
    let mut payload = Vec::new();
    for (name, tensor) in map.iter() {
        let begin = payload.len();
        payload.extend_from_slice(&tensor.le_bytes());
        let entry = HeaderEntry {
            dtype: tensor.dtype().name().to_owned(),
            shape: tensor.shape().to_vec(),
            data_offsets: [begin, payload.len()],
        };
        header.insert(name.to_owned(), serde_json::to_value(entry).expect("entry serializes"));
    }
    let header_json = serde_json::to_string(&serde_json::Value::Object(header))
        .expect("header serializes");

    let mut bytes = Vec::with_capacity(8 + header_json.len() + payload.len());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(header_json.as_bytes());
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> tempfile::TempDir {
        tempfile::Builder::new().prefix(name).tempdir().unwrap()
    }

    #[test]
    fn round_trip_single_tensor() {
        let dir = tmp("store");
        let path = dir.path().join("a.safetensors");
        let mut m = TensorMap::new();
        m.insert("w", Tensor::from_f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        m.set_metadata("note", "fixture");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.get("w"), m.get("w"));
        assert_eq!(back.metadata(), m.metadata());
        assert_eq!(back.content_digest(), m.content_digest());
    }

    #[test]
    fn empty_map_round_trips() {
        let dir = tmp("store");
        let path = dir.path().join("empty.safetensors");
        save_checkpoint(&TensorMap::new(), &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.len(), 0);
    }

    #[test]
    fn zero_length_file_is_malformed() {
        let dir = tmp("store");
        let path = dir.path().join("zero.safetensors");
        std::fs::write(&path, []).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(StoreError::MalformedHeader(_))));
    }

    #[test]
    fn truncated_header_is_malformed() {
        let dir = tmp("store");
        let path = dir.path().join("trunc.safetensors");
        std::fs::write(&path, 10_000u64.to_le_bytes()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(StoreError::MalformedHeader(_))));
    }

    #[test]
    fn unsupported_dtype_names_the_tensor() {
        let dir = tmp("store");
        let path = dir.path().join("i8.safetensors");
        let header = r#"{"q":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path) {
            Err(StoreError::UnsupportedDtype { name, dtype }) => {
                assert_eq!(name, "q");
                assert_eq!(dtype, "I8");
            }
            other => panic!("expected UnsupportedDtype, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_span_is_shape_mismatch() {
        let dir = tmp("store");
        let path = dir.path().join("bad.safetensors");
        let header = r#"{"w":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(StoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn scalar_empty_shape_round_trips() {
        let dir = tmp("store");
        let path = dir.path().join("scalar.safetensors");
        let mut m = TensorMap::new();
        m.insert("s", Tensor::from_f32(vec![], vec![7.5]).unwrap()).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.get("s").unwrap().as_f32().unwrap(), &[7.5]);
        assert_eq!(back.get("s").unwrap().shape(), &[] as &[usize]);
    }

    #[test]
    fn saving_is_deterministic() {
        let dir = tmp("store");
        let a = dir.path().join("a.safetensors");
        let b = dir.path().join("b.safetensors");
        let mut m = TensorMap::new();
        m.insert("b", Tensor::from_f32(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        m.insert("a", Tensor::from_f64(vec![1], vec![3.0]).unwrap()).unwrap();
        save_checkpoint(&m, &a).unwrap();
        save_checkpoint(&m, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn nonfinite_map_is_rejected_on_save() {
        let dir = tmp("store");
        let path = dir.path().join("nan.safetensors");
        let mut m = TensorMap::new();
        m.insert("w", Tensor::from_f64(vec![1], vec![f64::NAN]).unwrap()).unwrap();
        assert!(matches!(save_checkpoint(&m, &path), Err(StoreError::InvariantViolation(_))));
    }
}
