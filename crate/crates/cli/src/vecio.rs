//! Bias-vector persistence: the delta as a checkpoint file plus a JSON
//! sidecar with the excluded names, source digests, and flags.
//!
//! The exact-recovery residual tensors (see the core arithmetic module)
//! are stored in the same checkpoint under a reserved name prefix and
//! split back out on load, so recovery stays bit-exact across process
//! boundaries.

use std::path::{Path, PathBuf};

use biasvec_core::arith::hex;
use biasvec_core::{BiasVector, TensorMap};
use serde::{Deserialize, Serialize};

use crate::store::{load_checkpoint, save_checkpoint, StoreError};

/// Reserved prefix for residual tensors inside the vector checkpoint.
const RESIDUAL_PREFIX: &str = "__residual__::";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    excluded: Vec<String>,
    source_org_digest: Option<String>,
    source_bias_digest: Option<String>,
    seed: Option<u64>,
    note: String,
    /// True when every delta element is exactly zero (λ has no effect).
    zero_vector: bool,
}

pub fn sidecar_path(vector_path: &Path) -> PathBuf {
    let mut os = vector_path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

pub fn is_zero_vector(v: &BiasVector) -> bool {
    v.delta.iter().all(|(_, t)| t.iter_f64().all(|x| x == 0.0))
}

fn parse_digest(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

pub fn save_vector(v: &BiasVector, path: &Path) -> Result<(), StoreError> {
    let mut combined = TensorMap::new();
    for (name, t) in v.delta.iter() {
        combined.insert(name, t.clone()).expect("delta names unique");
    }
    for (name, t) in v.residual.iter() {
        combined
            .insert(&format!("{RESIDUAL_PREFIX}{name}"), t.clone())
            .expect("residual names unique");
    }
    combined.set_metadata("biasvec.kind", "bias_vector");
    save_checkpoint(&combined, path)?;

    let sidecar = Sidecar {
        excluded: v.excluded.clone(),
        source_org_digest: v.source_org_digest.as_ref().map(|d| hex(d)),
        source_bias_digest: v.source_bias_digest.as_ref().map(|d| hex(d)),
        seed: v.seed,
        note: v.note.clone(),
        zero_vector: is_zero_vector(v),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(sidecar_path(path), json).map_err(|e| StoreError::IoFailure {
        path: sidecar_path(path).display().to_string(),
        source: e,
    })
}

pub fn load_vector(path: &Path) -> Result<BiasVector, StoreError> {
    let combined = load_checkpoint(path)?;
    let mut delta = TensorMap::new();
    let mut residual = TensorMap::new();
    for (name, t) in combined.iter() {
        if let Some(stripped) = name.strip_prefix(RESIDUAL_PREFIX) {
            residual.insert(stripped, t.clone()).expect("names unique in source file");
        } else {
            delta.insert(name, t.clone()).expect("names unique in source file");
        }
    }

    let sc_path = sidecar_path(path);
    let sidecar: Sidecar = if sc_path.exists() {
        let text = std::fs::read_to_string(&sc_path).map_err(|e| StoreError::IoFailure {
            path: sc_path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| {
            StoreError::MalformedHeader(format!("sidecar {}: {e}", sc_path.display()))
        })?
    } else {
        Sidecar {
            excluded: Vec::new(),
            source_org_digest: None,
            source_bias_digest: None,
            seed: None,
            note: String::new(),
            zero_vector: false,
        }
    };

    Ok(BiasVector {
        delta,
        residual,
        excluded: sidecar.excluded,
        source_org_digest: sidecar.source_org_digest.as_deref().and_then(parse_digest),
        source_bias_digest: sidecar.source_bias_digest.as_deref().and_then(parse_digest),
        seed: sidecar.seed,
        note: sidecar.note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use biasvec_core::arith::{apply, diff};
    use biasvec_core::{LayerFilter, Tensor};

    fn map1(name: &str, vals: &[f64]) -> TensorMap {
        let mut m = TensorMap::new();
        m.insert(name, Tensor::from_f64(vec![vals.len()], vals.to_vec()).unwrap()).unwrap();
        m
    }

    #[test]
    fn vector_round_trip_preserves_exact_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.safetensors");
        let org = map1("w", &[0.1, 0.2, -0.3]);
        let biased = map1("w", &[0.7, -0.05, 0.11]);
        let v = diff(&biased, &org, &LayerFilter::none()).unwrap();
        save_vector(&v, &path).unwrap();
        let back = load_vector(&path).unwrap();
        assert_eq!(back, v);
        let recovered = apply(&org, &back, -1.0).unwrap();
        assert_eq!(recovered.get("w"), biased.get("w"));
    }

    #[test]
    fn sidecar_records_exclusions_and_zero_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.safetensors");
        let mut org = map1("w", &[1.0]);
        org.insert("enc.ln1.weight", Tensor::from_f64(vec![1], vec![2.0]).unwrap()).unwrap();
        let v = diff(&org, &org, &LayerFilter::default_layernorm()).unwrap();
        assert!(is_zero_vector(&v));
        save_vector(&v, &path).unwrap();
        let text = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(text.contains("enc.ln1.weight"));
        assert!(text.contains("\"zero_vector\": true"));
        let back = load_vector(&path).unwrap();
        assert_eq!(back.excluded, vec!["enc.ln1.weight".to_owned()]);
    }
}
