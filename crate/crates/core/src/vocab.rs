//! Whitespace/punctuation tokenizer with a counted vocabulary.
//!
//! Deliberately simple: lowercase, split tokens on whitespace, peel
//! punctuation into separate tokens. Subword tokenization is out of scope
//! at desk scale.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const UNK: u32 = 4;

pub const SPECIAL_TOKENS: &[&str] = &["[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"];

/// Token to dense-id map with fixed special ids 0..=4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmptyCorpus;

impl fmt::Display for EmptyCorpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot build a vocabulary from an empty corpus")
    }
}

impl core::error::Error for EmptyCorpus {}

/// Lowercase and split into word/punctuation tokens.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !word.is_empty() {
                out.push(core::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() || ch == '\'' {
            word.push(ch);
        } else {
            if !word.is_empty() {
                out.push(core::mem::take(&mut word));
            }
            let mut p = String::new();
            p.push(ch);
            out.push(p);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

impl Vocab {
    /// Specials first, then tokens with count >= `min_count` ordered by
    /// (count descending, lexicographic). Deterministic for a given corpus.
    pub fn build<S: AsRef<str>>(
        corpus: impl IntoIterator<Item = S>,
        min_count: usize,
    ) -> Result<Vocab, EmptyCorpus> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut saw_any = false;
        for sentence in corpus {
            saw_any = true;
            for tok in split_tokens(sentence.as_ref()) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !saw_any {
            return Err(EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|&s| s.to_owned()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab { token_to_id, id_to_token })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id <= UNK
    }

    /// Encode as `[CLS] tokens... [SEP]`, UNK fallback, truncated to
    /// `max_len` ids (the trailing SEP survives truncation).
    pub fn tokenize(&self, text: &str, max_len: usize) -> Vec<u32> {
        debug_assert!(max_len >= 2);
        let mut ids = Vec::new();
        ids.push(CLS);
        for tok in split_tokens(text) {
            ids.push(self.id(&tok).unwrap_or(UNK));
        }
        ids.truncate(max_len.saturating_sub(1).max(1));
        ids.push(SEP);
        ids
    }

    /// Stable serialization order: one token per line, id order.
    pub fn tokens_in_id_order(&self) -> impl Iterator<Item = &str> {
        self.id_to_token.iter().map(String::as_str)
    }

    /// Rebuild from a previously stored id-ordered token list.
    pub fn from_id_ordered<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Option<Vocab> {
        let id_to_token: Vec<String> = tokens.into_iter().map(|t| t.as_ref().to_owned()).collect();
        if id_to_token.len() < SPECIAL_TOKENS.len() {
            return None;
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if id_to_token[i] != *s {
                return None;
            }
        }
        let token_to_id: BTreeMap<String, u32> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if token_to_id.len() != id_to_token.len() {
            return None; // duplicate tokens
        }
        Some(Vocab { token_to_id, id_to_token })
    }
}
