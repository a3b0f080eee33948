//! Multi-set prediction baseline: a GRU fed the victim embedding at every
//! step, emitting one token per step. At step `t` the loss is
//! `-log Σ_{w ∈ remaining(t)} Pr_t(w)`, where `remaining(t)` is the label set
//! minus the tokens emitted at earlier steps.

use std::collections::BTreeSet;

use embinv_autograd::{init, Graph, Mat, ParamId, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::inversion::InversionResult;
use crate::training::{self, EpochRecord, FitOutcome, Sample, TrainConfig, Trainable};
use crate::victim::SentenceEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct MspConfig {
    pub embedding_dim: usize,
    /// GRU hidden width.
    pub hidden: usize,
    /// Number of emission steps `T`.
    pub steps: usize,
    pub seed: u64,
}

impl MspConfig {
    pub fn new(embedding_dim: usize) -> Self {
        MspConfig {
            embedding_dim,
            hidden: 128,
            steps: 10,
            seed: 0,
        }
    }
}

pub struct MspAttacker {
    config: MspConfig,
    vocab: Vocabulary,
    store: ParamStore,
    w_ih: ParamId,
    b_ih: ParamId,
    w_hh: ParamId,
    b_hh: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Highest-scoring token of `candidates` (lowest id on ties).
fn argmax_among(row: &[f64], candidates: impl Iterator<Item = TokenId>) -> Option<TokenId> {
    let mut best: Option<TokenId> = None;
    for t in candidates {
        if best.is_none_or(|b| row[t as usize] > row[b as usize]) {
            best = Some(t);
        }
    }
    best
}

impl MspAttacker {
    pub fn new(config: MspConfig, vocab: Vocabulary) -> Result<Self> {
        if config.embedding_dim == 0 || config.hidden == 0 || config.steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate recurrent config {config:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (d, h, v) = (config.embedding_dim, config.hidden, vocab.len());
        let bound = 1.0 / (h as f64).sqrt();
        let w_ih = store.add("gru.w_ih", init::uniform(&mut rng, d, 3 * h, bound));
        let b_ih = store.add("gru.b_ih", init::uniform(&mut rng, 1, 3 * h, bound));
        let w_hh = store.add("gru.w_hh", init::uniform(&mut rng, h, 3 * h, bound));
        let b_hh = store.add("gru.b_hh", init::uniform(&mut rng, 1, 3 * h, bound));
        let head_w = store.add("head.w", init::uniform(&mut rng, h, v, bound));
        let head_b = store.add("head.b", init::zeros(1, v));
        Ok(MspAttacker {
            config,
            vocab,
            store,
            w_ih,
            b_ih,
            w_hh,
            b_hh,
            head_w,
            head_b,
        })
    }

    pub fn from_store(config: MspConfig, vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(config, vocab)?;
        training::check_layout(&fresh.store, &store)?;
        fresh.store = store;
        Ok(fresh)
    }

    pub fn config(&self) -> &MspConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Sets the output head to zero so every step predicts uniformly.
    pub fn zero_output_head(&mut self) {
        self.store.get_mut(self.head_w).fill(0.0);
        self.store.get_mut(self.head_b).fill(0.0);
    }

    fn inputs(&self, embeddings: &[&[f32]]) -> Result<Mat> {
        let d = self.config.embedding_dim;
        let mut x = Mat::zeros((embeddings.len(), d));
        for (r, e) in embeddings.iter().enumerate() {
            if e.len() != d {
                return Err(Error::LengthMismatch(format!(
                    "embedding has {} entries, attacker expects {d}",
                    e.len()
                )));
            }
            for (dst, &src) in x.row_mut(r).iter_mut().zip(e.iter()) {
                *dst = src as f64;
            }
        }
        Ok(x)
    }

    /// Output logits of every step, each `(batch, |V|)`.
    fn step_logits<'s>(&'s self, g: &mut Graph<'s>, x: Mat) -> Vec<Var> {
        let (b, h) = (x.nrows(), self.config.hidden);
        let x = g.constant(x);
        let (w_ih, b_ih) = (g.param(self.w_ih), g.param(self.b_ih));
        let gi = g.linear(x, w_ih, b_ih);
        let gi_r = g.slice_cols(gi, 0, h);
        let gi_z = g.slice_cols(gi, h, h);
        let gi_n = g.slice_cols(gi, 2 * h, h);
        let mut state = g.constant(Mat::zeros((b, h)));
        let mut out = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let (w_hh, b_hh) = (g.param(self.w_hh), g.param(self.b_hh));
            let gh = g.linear(state, w_hh, b_hh);
            let gh_r = g.slice_cols(gh, 0, h);
            let gh_z = g.slice_cols(gh, h, h);
            let gh_n = g.slice_cols(gh, 2 * h, h);
            let r = g.add(gi_r, gh_r);
            let r = g.sigmoid(r);
            let z = g.add(gi_z, gh_z);
            let z = g.sigmoid(z);
            let n = g.mul(r, gh_n);
            let n = g.add(gi_n, n);
            let n = g.tanh(n);
            let keep = g.sub(state, n);
            let keep = g.mul(z, keep);
            state = g.add(n, keep);
            let (hw, hb) = (g.param(self.head_w), g.param(self.head_b));
            out.push(g.linear(state, hw, hb));
        }
        out
    }

    /// Distinct content tokens of a sentence.
    pub fn label_set(tokens: &[TokenId]) -> BTreeSet<TokenId> {
        tokens.iter().copied().filter(|&t| !Vocabulary::is_special(t)).collect()
    }

    fn loss_node<'s>(&'s self, g: &mut Graph<'s>, batch: &[Sample<'_>]) -> Result<Var> {
        let embeddings: Vec<&[f32]> = batch.iter().map(|s| s.embedding).collect();
        let logits = self.step_logits(g, self.inputs(&embeddings)?);
        let mut remaining: Vec<BTreeSet<TokenId>> = batch.iter().map(|s| Self::label_set(s.tokens)).collect();
        let mut total: Option<Var> = None;
        for &step in &logits {
            let sets: Vec<Vec<usize>> = remaining
                .iter()
                .map(|r| r.iter().map(|&t| t as usize).collect())
                .collect();
            let values = g.value(step);
            for (row, rem) in values.rows().into_iter().zip(remaining.iter_mut()) {
                let row = row.as_slice().expect("contiguous row");
                if let Some(t) = argmax_among(row, rem.iter().copied()) {
                    rem.remove(&t);
                }
            }
            let l = g.set_nll(step, sets);
            total = Some(match total {
                Some(t) => g.add(t, l),
                None => l,
            });
        }
        let total = total.expect("at least one step");
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }

    /// Summed multi-set loss of one batch, averaged over its sentences.
    pub fn loss(&self, batch: &[Sample<'_>]) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let l = self.loss_node(&mut g, batch)?;
        Ok(g.scalar(l))
    }

    /// Per-step loss contributions for one sentence.
    pub fn step_losses(&self, sample: Sample<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let logits = self.step_logits(&mut g, self.inputs(&[sample.embedding])?);
        let mut remaining = Self::label_set(sample.tokens);
        let mut out = Vec::with_capacity(logits.len());
        for step in logits {
            let row = g.value(step).row(0).to_vec();
            let set: Vec<usize> = remaining.iter().map(|&t| t as usize).collect();
            let l = g.set_nll(step, vec![set]);
            out.push(g.scalar(l));
            if let Some(t) = argmax_among(&row, remaining.iter().copied()) {
                remaining.remove(&t);
            }
        }
        Ok(out)
    }

    /// Softmax distribution of every step for one embedding.
    pub fn step_probabilities(&self, embedding: &[f32]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new(&self.store);
        let logits = self.step_logits(&mut g, self.inputs(&[embedding])?);
        Ok(logits
            .into_iter()
            .map(|l| {
                let row = g.value(l).row(0).to_vec();
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                exp.into_iter().map(|e| e / z).collect()
            })
            .collect())
    }

    /// Runs all steps, emitting at each the best content token not yet
    /// emitted.
    pub fn predict(&self, embedding: &SentenceEmbedding) -> Result<InversionResult> {
        let mut g = Graph::new(&self.store);
        let logits = self.step_logits(&mut g, self.inputs(&[&embedding.values])?);
        let mut emitted = BTreeSet::new();
        for step in logits {
            let row = g.value(step).row(0).to_vec();
            let open = self.vocab.content_ids().filter(|t| !emitted.contains(t));
            if let Some(t) = argmax_among(&row, open) {
                emitted.insert(t);
            }
        }
        Ok(InversionResult::set(emitted.into_iter().collect(), &self.vocab))
    }
}

impl Trainable for MspAttacker {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss<'s>(&'s self, g: &mut Graph<'s>, batch: &[Sample<'_>]) -> Result<Var> {
        self.loss_node(g, batch)
    }
}

/// Minimizes the multi-set loss; keeps the dev-best parameters.
pub fn train(
    attacker: &mut MspAttacker,
    train: &[Sample<'_>],
    dev: &[Sample<'_>],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    training::fit(attacker, train, dev, config, on_epoch)
}
