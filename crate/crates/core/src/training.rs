//! Mini-batch training loop shared by all three attackers.

use std::time::Instant;

use embinv_autograd::{clip_grad_norm, Adam, AdamConfig, Graph, ParamStore, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{AnnotatedSentence, TokenId};
use crate::error::{Error, Result};
use crate::victim::SentenceEmbedding;

/// One `(f(x), x)` pair as seen by an attacker.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub embedding: &'a [f32],
    pub tokens: &'a [TokenId],
}

/// Pairs embeddings with their sentences, checking lengths and victim identity.
pub fn samples<'a>(embeddings: &'a [SentenceEmbedding], sentences: &'a [AnnotatedSentence]) -> Result<Vec<Sample<'a>>> {
    if embeddings.len() != sentences.len() {
        return Err(Error::LengthMismatch(format!(
            "{} embeddings for {} sentences",
            embeddings.len(),
            sentences.len()
        )));
    }
    if let Some(first) = embeddings.first() {
        if let Some(odd) = embeddings.iter().find(|e| e.victim_id != first.victim_id) {
            return Err(Error::InvalidArgument(format!(
                "embeddings from two victims: {} and {}",
                first.victim_id, odd.victim_id
            )));
        }
    }
    Ok(embeddings
        .iter()
        .zip(sentences)
        .map(|(e, s)| Sample {
            embedding: &e.values,
            tokens: &s.token_ids,
        })
        .collect())
}

/// A model whose parameters can be fitted by [`fit`].
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Scalar loss node for one mini-batch.
    fn batch_loss<'s>(&'s self, g: &mut Graph<'s>, batch: &[Sample<'_>]) -> Result<Var>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 64,
            epochs: 10,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    /// Epoch whose parameters were kept (0 = untrained).
    pub best_epoch: usize,
    /// Selection loss of that epoch: dev loss, or train loss without a dev split.
    pub best_loss: f64,
    pub log: Vec<EpochRecord>,
}

/// Sample-weighted mean loss over `data`, evaluated in batches.
pub fn mean_loss<T: Trainable>(model: &T, data: &[Sample<'_>], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty set".into()));
    }
    let mut total = 0.0;
    for batch in data.chunks(batch_size.max(1)) {
        let mut g = Graph::new(model.store());
        let l = model.batch_loss(&mut g, batch)?;
        total += g.scalar(l) * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Adam on `model`'s batch loss. Keeps the parameters of the epoch with the
/// lowest dev loss (train loss when `dev` is empty).
pub fn fit<T: Trainable>(
    model: &mut T,
    train: &[Sample<'_>],
    dev: &[Sample<'_>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut opt = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
        model.store(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let selection = |model: &T, train_loss: f64| -> Result<(Option<f64>, f64)> {
        if dev.is_empty() {
            Ok((None, train_loss))
        } else {
            let d = mean_loss(model, dev, config.batch_size)?;
            Ok((Some(d), d))
        }
    };
    let initial = if dev.is_empty() {
        mean_loss(model, train, config.batch_size)?
    } else {
        mean_loss(model, dev, config.batch_size)?
    };
    let mut best = (0, initial, model.store().clone());
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Sample> = idx.iter().map(|&i| train[i]).collect();
            let (loss, mut grads) = {
                let mut g = Graph::new(model.store());
                let l = model.batch_loss(&mut g, &batch)?;
                (g.scalar(l), g.backward(l))
            };
            let norm = match config.clip_norm {
                Some(c) => clip_grad_norm(&mut grads, c),
                None => grads.global_norm(),
            };
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            opt.step(model.store_mut(), &grads);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let (dev_loss, score) = selection(model, train_loss)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.5} dev {}",
            dev_loss.map_or("-".into(), |d| format!("{d:.5}"))
        );
        on_epoch(&record);
        log.push(record);
        if score < best.1 {
            best = (epoch, score, model.store().clone());
        }
    }
    let (best_epoch, best_loss, params) = best;
    *model.store_mut() = params;
    Ok(FitOutcome {
        best_epoch,
        best_loss,
        log,
    })
}

/// Checks that `got` has exactly the parameter names, slots and shapes of
/// a freshly built `expected`.
pub(crate) fn check_layout(expected: &ParamStore, got: &ParamStore) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {}",
            expected.len(),
            got.len()
        )));
    }
    for id in expected.ids() {
        let name = expected.name(id);
        let other = got
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if other != id || got.get(other).dim() != expected.get(id).dim() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has the wrong shape or slot"
            )));
        }
    }
    Ok(())
}
