//! Multi-label classification baseline: one affine layer from the victim
//! embedding to a sigmoid score per vocabulary token, thresholded into a
//! predicted word set.

use embinv_autograd::{init, Graph, Mat, ParamId, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::inversion::InversionResult;
use crate::metrics::{micro_prf, MatchMode};
use crate::training::{self, EpochRecord, FitOutcome, Sample, TrainConfig, Trainable};
use crate::victim::SentenceEmbedding;

pub struct MlcAttacker {
    embedding_dim: usize,
    seed: u64,
    vocab: Vocabulary,
    store: ParamStore,
    w: ParamId,
    b: ParamId,
}

impl MlcAttacker {
    pub fn new(embedding_dim: usize, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bound = 1.0 / (embedding_dim as f64).sqrt();
        let w = store.add("w", init::uniform(&mut rng, embedding_dim, vocab.len(), bound));
        let b = store.add("b", init::zeros(1, vocab.len()));
        Ok(MlcAttacker {
            embedding_dim,
            seed,
            vocab,
            store,
            w,
            b,
        })
    }

    pub fn from_store(embedding_dim: usize, vocab: Vocabulary, seed: u64, store: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(embedding_dim, vocab, seed)?;
        training::check_layout(&fresh.store, &store)?;
        fresh.store = store;
        Ok(fresh)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Presence indicators of each sentence's content tokens.
    fn targets(&self, batch: &[Sample<'_>]) -> Mat {
        let mut t = Mat::zeros((batch.len(), self.vocab.len()));
        for (r, s) in batch.iter().enumerate() {
            for &tok in s.tokens {
                if !Vocabulary::is_special(tok) && (tok as usize) < self.vocab.len() {
                    t[(r, tok as usize)] = 1.0;
                }
            }
        }
        t
    }

    fn inputs(&self, embeddings: &[&[f32]]) -> Result<Mat> {
        let mut x = Mat::zeros((embeddings.len(), self.embedding_dim));
        for (r, e) in embeddings.iter().enumerate() {
            if e.len() != self.embedding_dim {
                return Err(Error::LengthMismatch(format!(
                    "embedding has {} entries, attacker expects {}",
                    e.len(),
                    self.embedding_dim
                )));
            }
            for (dst, &src) in x.row_mut(r).iter_mut().zip(e.iter()) {
                *dst = src as f64;
            }
        }
        Ok(x)
    }

    /// Sigmoid score per vocabulary token, one row per embedding.
    pub fn scores(&self, embeddings: &[&[f32]]) -> Result<Mat> {
        let x = self.inputs(embeddings)?;
        let mut g = Graph::new(&self.store);
        let x = g.constant(x);
        let (w, b) = (g.param(self.w), g.param(self.b));
        let z = g.linear(x, w, b);
        let s = g.sigmoid(z);
        Ok(g.value(s).clone())
    }

    /// Content tokens scoring at least `threshold`.
    pub fn predict(&self, embedding: &SentenceEmbedding, threshold: f64) -> Result<InversionResult> {
        check_threshold(threshold)?;
        let s = self.scores(&[&embedding.values])?;
        Ok(InversionResult::set(
            select(s.row(0).as_slice().expect("contiguous row"), threshold),
            &self.vocab,
        ))
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

fn select(scores: &[f64], threshold: f64) -> Vec<TokenId> {
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| !Vocabulary::is_special(i as TokenId) && s >= threshold)
        .map(|(i, _)| i as TokenId)
        .collect()
}

impl Trainable for MlcAttacker {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss<'s>(&'s self, g: &mut Graph<'s>, batch: &[Sample<'_>]) -> Result<Var> {
        let embeddings: Vec<&[f32]> = batch.iter().map(|s| s.embedding).collect();
        let x = g.constant(self.inputs(&embeddings)?);
        let (w, b) = (g.param(self.w), g.param(self.b));
        let z = g.linear(x, w, b);
        Ok(g.bce_with_logits(z, self.targets(batch)))
    }
}

/// Minimizes mean binary cross-entropy; keeps the dev-best parameters.
pub fn train(
    attacker: &mut MlcAttacker,
    train: &[Sample<'_>],
    dev: &[Sample<'_>],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    training::fit(attacker, train, dev, config, on_epoch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// Ascending thresholds `0, interval, .., 1`.
    pub points: Vec<SweepPoint>,
    /// Threshold of the highest F1 (the lowest such threshold on ties).
    pub best_threshold: f64,
}

/// Number of grid steps for `interval`, which must divide 1.
pub fn grid_steps(interval: f64) -> Result<usize> {
    if !(interval > 0.0 && interval <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sweep interval {interval} outside (0, 1]"
        )));
    }
    let steps = (1.0 / interval).round();
    if (steps * interval - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "sweep interval {interval} does not divide 1"
        )));
    }
    Ok(steps as usize)
}

/// Set-mode micro P/R/F1 at every threshold of the grid.
pub fn sweep_thresholds(
    attacker: &MlcAttacker,
    embeddings: &[SentenceEmbedding],
    references: &[Vec<TokenId>],
    interval: f64,
) -> Result<Sweep> {
    let steps = grid_steps(interval)?;
    if embeddings.len() != references.len() {
        return Err(Error::LengthMismatch(format!(
            "{} embeddings for {} references",
            embeddings.len(),
            references.len()
        )));
    }
    let rows: Vec<&[f32]> = embeddings.iter().map(|e| e.values.as_slice()).collect();
    let scores = attacker.scores(&rows)?;
    let mut points = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let threshold = k as f64 / steps as f64;
        let preds: Vec<Vec<TokenId>> = scores
            .rows()
            .into_iter()
            .map(|r| select(r.as_slice().expect("contiguous row"), threshold))
            .collect();
        let prf = micro_prf(&preds, references, MatchMode::Set)?;
        points.push(SweepPoint {
            threshold,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        });
    }
    let best = points
        .iter()
        .fold(points[0], |best, p| if p.f1 > best.f1 { *p } else { best });
    Ok(Sweep {
        points,
        best_threshold: best.threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(
            ["<pad>", "<unk>", "<eos>", "a", "b", "c", "d"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn thresholds_bracket_the_vocabulary() {
        let m = MlcAttacker::new(3, vocab(), 1).unwrap();
        let e = SentenceEmbedding::new(vec![0.3, -0.2, 0.9], "v").unwrap();
        assert_eq!(m.predict(&e, 0.0).unwrap().tokens, vec![3, 4, 5, 6]);
        assert!(m.predict(&e, 1.0).unwrap().tokens.is_empty());
        assert!(m.predict(&e, 1.5).is_err());
    }

    #[test]
    fn targets_are_presence_without_specials() {
        let m = MlcAttacker::new(2, vocab(), 1).unwrap();
        let t = m.targets(&[Sample {
            embedding: &[0.0, 0.0],
            tokens: &[3, 3, 1, 5],
        }]);
        assert_eq!(t.row(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn overfits_one_sentence() {
        let mut m = MlcAttacker::new(4, vocab(), 3).unwrap();
        let e = SentenceEmbedding::new(vec![0.5, -1.0, 0.25, 0.8], "v").unwrap();
        let data = [Sample {
            embedding: &e.values,
            tokens: &[3, 4],
        }];
        let cfg = TrainConfig {
            lr: 0.05,
            batch_size: 1,
            epochs: 600,
            ..Default::default()
        };
        train(&mut m, &data, &[], &cfg, |_| {}).unwrap();
        let s = m.scores(&[&e.values]).unwrap();
        for tok in 3..7 {
            let v = s[(0, tok)];
            if tok <= 4 {
                assert!(v > 0.99, "token {tok} scored {v}");
            } else {
                assert!(v < 0.01, "token {tok} scored {v}");
            }
        }
        assert_eq!(m.predict(&e, 0.5).unwrap().tokens, vec![3, 4]);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut m = MlcAttacker::new(2, vocab(), 5).unwrap();
        let before = m.store.clone();
        let data = [Sample {
            embedding: &[1.0, 2.0],
            tokens: &[3],
        }];
        let cfg = TrainConfig {
            lr: 0.0,
            batch_size: 1,
            epochs: 3,
            ..Default::default()
        };
        train(&mut m, &data, &[], &cfg, |_| {}).unwrap();
        assert_eq!(m.store, before);
    }

    #[test]
    fn duplicated_rows_give_the_same_loss() {
        let m = MlcAttacker::new(2, vocab(), 5).unwrap();
        let one = [
            Sample {
                embedding: &[1.0, 2.0],
                tokens: &[3, 4],
            },
            Sample {
                embedding: &[-1.0, 0.5],
                tokens: &[6],
            },
        ];
        let two: Vec<Sample> = one.iter().chain(one.iter()).copied().collect();
        let loss = |b: &[Sample]| {
            let mut g = Graph::new(&m.store);
            let l = m.batch_loss(&mut g, b).unwrap();
            g.scalar(l)
        };
        assert!((loss(&one) - loss(&two)).abs() < 1e-12);
    }

    #[test]
    fn sweep_grid_and_recall_shape() {
        assert_eq!(grid_steps(0.05).unwrap(), 20);
        assert!(grid_steps(0.3).is_err());
        let m = MlcAttacker::new(2, vocab(), 9).unwrap();
        let embs: Vec<SentenceEmbedding> = (0..5)
            .map(|i| SentenceEmbedding::new(vec![i as f32 * 0.3, 1.0 - i as f32], "v").unwrap())
            .collect();
        let refs = vec![vec![3, 4], vec![5], vec![6, 3], vec![4], vec![5, 6]];
        let sweep = sweep_thresholds(&m, &embs, &refs, 0.05).unwrap();
        assert_eq!(sweep.points.len(), 21);
        assert_eq!(sweep.points[0].recall, 1.0);
        for w in sweep.points.windows(2) {
            assert!(w[1].recall <= w[0].recall);
        }
        let best = sweep.points.iter().map(|p| p.f1).fold(0.0, f64::max);
        let chosen = sweep
            .points
            .iter()
            .find(|p| p.threshold == sweep.best_threshold)
            .unwrap();
        assert_eq!(chosen.f1, best);
    }
}
