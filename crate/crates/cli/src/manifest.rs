//! Run manifests: enough resolved state to re-run a command exactly.
//!
//! A manifest is written as soon as arguments and inputs are resolved —
//! before any output — so even failed runs leave a reproducible record.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every resolved option, stringified, keyed by flag name.
    pub options: BTreeMap<String, String>,
    /// Content digests (hex SHA-256) of each input file, keyed by role.
    pub input_digests: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub timestamp_unix_secs: u64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_owned(),
            options: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            seeds: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            timestamp_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn option(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.options.insert(key.to_owned(), value.to_string());
        self
    }

    /// Digest a raw input file (hex SHA-256 of its bytes).
    pub fn input_file(&mut self, role: &str, path: &Path) -> std::io::Result<&mut Self> {
        use sha2::{Digest, Sha256};
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        self.input_digests.insert(role.to_owned(), biasvec_core::arith::hex(&digest));
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_and_digests_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "hello").unwrap();
        let out = dir.path().join("manifest.json");

        let mut m = RunManifest::new("eval-seat");
        m.option("pooling", "mean");
        m.input_file("model", &input).unwrap();
        m.seeds = vec![1, 2, 3];
        m.write(&out).unwrap();

        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(back.command, "eval-seat");
        assert_eq!(back.options["pooling"], "mean");
        assert_eq!(back.seeds, vec![1, 2, 3]);
        // SHA-256 of "hello"
        assert_eq!(
            back.input_digests["model"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
    }
}
