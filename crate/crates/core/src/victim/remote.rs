use std::time::Duration;

use serde::Deserialize;

use super::{SentenceEmbedding, Victim};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub victim_id: String,
    pub dim: usize,
    pub timeout: Duration,
    pub retries: u32,
}

/// Victim served over HTTP: `POST {"texts": [...]}` answered by
/// `{"embeddings": [[...], ...]}`.
pub struct RemoteVictim {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteVictim {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::InvalidArgument(
                "remote victim dimension must be positive".into(),
            ));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteVictim { config, agent })
    }

    fn request(&self, texts: &[&str]) -> std::result::Result<Vec<u8>, String> {
        let mut resp = self
            .agent
            .post(&self.config.url)
            .send_json(serde_json::json!({ "texts": texts }))
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let body = resp.body_mut().read_to_vec().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        Ok(body)
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Validates a provider reply: exactly `expected` rows of `dim` finite numbers.
pub fn parse_embedding_response(body: &[u8], expected: usize, dim: usize) -> Result<Vec<Vec<f32>>> {
    let resp: EmbeddingResponse =
        serde_json::from_slice(body).map_err(|e| Error::Protocol(format!("bad response body: {e}")))?;
    if resp.embeddings.len() != expected {
        return Err(Error::Protocol(format!(
            "expected {expected} embeddings, got {}",
            resp.embeddings.len()
        )));
    }
    resp.embeddings
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != dim {
                return Err(Error::Protocol(format!(
                    "embedding {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            let row: Vec<f32> = row.into_iter().map(|x| x as f32).collect();
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Protocol(format!("embedding {i} is not finite in f32")));
            }
            Ok(row)
        })
        .collect()
}

impl Victim for RemoteVictim {
    fn victim_id(&self) -> &str {
        &self.config.victim_id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<SentenceEmbedding>> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self.request(texts) {
                Ok(body) => {
                    return parse_embedding_response(&body, texts.len(), self.config.dim)?
                        .into_iter()
                        .map(|v| SentenceEmbedding::new(v, self.config.victim_id.clone()))
                        .collect();
                }
                Err(e) => {
                    log::warn!("remote victim attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Protocol(format!(
            "{} unreachable after {} attempts: {last}",
            self.config.url,
            self.config.retries + 1
        )))
    }
}
