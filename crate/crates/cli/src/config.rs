//! JSON run configuration for the training commands: encoder dimensions
//! plus optimizer/schedule settings, every field optional with the
//! documented defaults.

use std::path::Path;

use biasvec_core::model::EncoderConfig;
use biasvec_core::train::{MaskPolicy, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // encoder dimensions
    pub layers: Option<usize>,
    pub d_model: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub max_len: Option<usize>,
    // training
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub mask_rate: Option<f64>,
    /// "standard" (80/10/10) or "all-mask".
    pub mask_policy: Option<String>,
    /// Tokens rarer than this in the vocab-building corpus map to UNK.
    pub vocab_min_count: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("reading config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Encoder dimensions with `vocab_size` filled in by the caller.
    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        let d = EncoderConfig::default();
        EncoderConfig {
            layers: self.layers.unwrap_or(d.layers),
            d_model: self.d_model.unwrap_or(d.d_model),
            heads: self.heads.unwrap_or(d.heads),
            ffn_dim: self.ffn_dim.unwrap_or(d.ffn_dim),
            max_len: self.max_len.unwrap_or(d.max_len),
            vocab_size,
        }
    }

    pub fn train(&self, seed: u64) -> Result<TrainConfig, String> {
        let d = TrainConfig::default();
        let policy = match self.mask_policy.as_deref() {
            None | Some("standard") => MaskPolicy::Standard,
            Some("all-mask") => MaskPolicy::AllMask,
            Some(other) => {
                return Err(format!(
                    "unknown mask_policy {other:?} (expected \"standard\" or \"all-mask\")"
                ))
            }
        };
        Ok(TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            warmup_steps: self.warmup_steps.or(d.warmup_steps),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            mask_rate: self.mask_rate.unwrap_or(d.mask_rate),
            policy,
            seed,
        })
    }

    pub fn vocab_min_count(&self) -> usize {
        self.vocab_min_count.unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_and_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(br#"{"d_model": 32, "epochs": 5, "learning_rate": 0.003}"#).unwrap();
        let cfg = RunConfig::load(f.path()).unwrap();
        let enc = cfg.encoder(100);
        assert_eq!(enc.d_model, 32);
        assert_eq!(enc.layers, EncoderConfig::default().layers);
        assert_eq!(enc.vocab_size, 100);
        let t = cfg.train(9).unwrap();
        assert_eq!(t.epochs, 5);
        assert_eq!(t.learning_rate, 0.003);
        assert_eq!(t.seed, 9);
        assert_eq!(t.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_field_is_an_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(br#"{"learning_rat": 0.003}"#).unwrap();
        assert!(RunConfig::load(f.path()).is_err());
    }

    #[test]
    fn bad_mask_policy_is_an_error() {
        let cfg = RunConfig { mask_policy: Some("sometimes".into()), ..RunConfig::default() };
        assert!(cfg.train(0).is_err());
    }
}
