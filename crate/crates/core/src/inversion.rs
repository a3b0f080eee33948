use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionKind {
    /// Ordered token sequence (generative attacker).
    Sequence,
    /// Unordered, duplicate-free token set (classification baselines).
    Set,
}

/// What an attacker recovered for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub index: usize,
    pub kind: InversionKind,
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Total log-probability for decoded sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl InversionResult {
    pub fn sequence(tokens: Vec<TokenId>, vocab: &Vocabulary, score: Option<f64>) -> Self {
        InversionResult {
            index: 0,
            kind: InversionKind::Sequence,
            text: vocab.detokenize(&tokens),
            tokens,
            score,
        }
    }

    /// Builds a set result; `tokens` are sorted and deduplicated.
    pub fn set(mut tokens: Vec<TokenId>, vocab: &Vocabulary) -> Self {
        tokens.sort_unstable();
        tokens.dedup();
        InversionResult {
            index: 0,
            kind: InversionKind::Set,
            text: vocab.detokenize(&tokens),
            tokens,
            score: None,
        }
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}
