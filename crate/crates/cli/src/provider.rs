//! Sentence-embedding provider backed by the desk-scale encoder.
//!
//! Model checkpoints are self-contained: the encoder dimensions live in
//! the checkpoint metadata (written at init) and the vocabulary is stored
//! as a newline-joined token list under the `vocab` metadata key.

use std::collections::HashMap;

use biasvec_core::model::EncoderConfig;
use biasvec_core::seat::EmbeddingProvider;
use biasvec_core::train::{embed_sentence, Pooling};
use biasvec_core::vocab::Vocab;
use biasvec_core::TensorMap;

/// Metadata key holding the newline-joined, id-ordered token list.
pub const VOCAB_KEY: &str = "vocab";

pub fn attach_vocab(params: &mut TensorMap, vocab: &Vocab) {
    let joined: Vec<&str> = vocab.tokens_in_id_order().collect();
    params.set_metadata(VOCAB_KEY, &joined.join("\n"));
}

pub fn vocab_from_metadata(params: &TensorMap) -> Option<Vocab> {
    let joined = params.metadata().get(VOCAB_KEY)?;
    Vocab::from_id_ordered(joined.lines())
}

/// Embeds sentences with a checkpoint's encoder, caching per sentence.
pub struct MinilmProvider {
    params: TensorMap,
    cfg: EncoderConfig,
    vocab: Vocab,
    pooling: Pooling,
    cache: HashMap<String, Vec<f64>>,
}

impl MinilmProvider {
    /// Build from a self-contained checkpoint (config + vocab in metadata).
    pub fn from_checkpoint(params: TensorMap, pooling: Pooling) -> Result<Self, String> {
        let cfg = EncoderConfig::from_metadata(&params)
            .ok_or("checkpoint metadata lacks encoder dimensions")?;
        let vocab = vocab_from_metadata(&params)
            .ok_or("checkpoint metadata lacks a vocabulary")?;
        Ok(MinilmProvider { params, cfg, vocab, pooling, cache: HashMap::new() })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }
}

impl EmbeddingProvider for MinilmProvider {
    fn embed(&mut self, sentence: &str) -> Result<Vec<f64>, String> {
        if let Some(hit) = self.cache.get(sentence) {
            return Ok(hit.clone());
        }
        let v = embed_sentence(&self.params, &self.cfg, &self.vocab, sentence, self.pooling)
            .map_err(|e| format!("embedding {sentence:?}: {e}"))?;
        self.cache.insert(sentence.to_owned(), v.clone());
        Ok(v)
    }
}
