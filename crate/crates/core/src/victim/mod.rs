//! Frozen sentence encoders with query-only access.
//!
//! Attackers only ever see a [`Victim`] through [`Victim::embed_texts`]; the
//! toy encoders keep their weights private and the remote client has none.

mod cache;
mod remote;
mod toy;

pub use cache::{embed_corpus_cached, CacheManifest};
pub use remote::{parse_embedding_response, RemoteConfig, RemoteVictim};
pub use toy::{make_toy_victim, ToyVictim, VictimKind};

use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};

/// Fixed-width embedding produced by a victim.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub values: Vec<f32>,
    pub victim_id: String,
}

impl SentenceEmbedding {
    pub fn new(values: Vec<f32>, victim_id: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("embedding has non-finite entries".into()));
        }
        Ok(SentenceEmbedding {
            values,
            victim_id: victim_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Black-box sentence embedding model.
pub trait Victim: Send + Sync {
    fn victim_id(&self) -> &str;

    fn dim(&self) -> usize;

    /// One embedding per text, in order. Repeated calls on the same text
    /// must return bit-identical vectors.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<SentenceEmbedding>>;
}

/// Embeds a single sentence.
pub fn embed(victim: &dyn Victim, sentence: &AnnotatedSentence) -> Result<SentenceEmbedding> {
    let mut out = victim.embed_texts(&[sentence.text.as_str()])?;
    out.pop()
        .ok_or_else(|| Error::Protocol("victim returned no embedding".into()))
}

/// Embeds sentences in chunks of `chunk` texts.
pub fn embed_all(victim: &dyn Victim, sentences: &[AnnotatedSentence], chunk: usize) -> Result<Vec<SentenceEmbedding>> {
    let mut out = Vec::with_capacity(sentences.len());
    for part in sentences.chunks(chunk.max(1)) {
        let texts: Vec<&str> = part.iter().map(|s| s.text.as_str()).collect();
        let got = victim.embed_texts(&texts)?;
        if got.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                got.len()
            )));
        }
        for e in &got {
            if e.dim() != victim.dim() {
                return Err(Error::Protocol(format!(
                    "embedding has {} entries, victim declares {}",
                    e.dim(),
                    victim.dim()
                )));
            }
        }
        out.extend(got);
    }
    Ok(out)
}
