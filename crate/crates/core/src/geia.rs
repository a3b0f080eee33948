//! Generative inversion: a causal transformer decoder that reads the victim
//! embedding as its first input position and is trained with teacher forcing
//! to emit the sentence followed by `<eos>`.
//!
//! For a sentence `w_0 .. w_{u-1}` the decoder input is
//! `[Align(f(x)), E(w_0), .., E(w_{u-1})]` and the target is
//! `[w_0, .., w_{u-1}, <eos>]`; both have length `u + 1`. The aligned
//! embedding skips the token-embedding table but, like every position,
//! receives a learned position vector.

use embinv_autograd::{init, Graph, Mat, ParamId, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::inversion::InversionResult;
use crate::training::{self, FitOutcome, Sample, TrainConfig, Trainable};
use crate::victim::SentenceEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct GeiaConfig {
    /// Victim embedding width `d_v`.
    pub embedding_dim: usize,
    /// Decoder width `d_a`.
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longest input sequence (aligned embedding included).
    pub max_positions: usize,
    pub seed: u64,
}

impl GeiaConfig {
    pub fn new(embedding_dim: usize) -> Self {
        GeiaConfig {
            embedding_dim,
            width: 128,
            layers: 4,
            heads: 4,
            max_positions: 64,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.embedding_dim == 0 || self.width == 0 || self.heads == 0 {
            return bad(format!("degenerate decoder config {self:?}"));
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if self.max_positions < 2 {
            return bad("max_positions must allow at least one token".into());
        }
        Ok(())
    }
}

struct Linear {
    w: ParamId,
    b: ParamId,
}

struct Norm {
    gain: ParamId,
    bias: ParamId,
}

struct Block {
    ln1: Norm,
    qkv: Linear,
    proj: Linear,
    ln2: Norm,
    fc: Linear,
    out: Linear,
}

struct Params {
    align: Linear,
    tokens: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
    ln_f: Norm,
    head: Linear,
}

/// Decoder-only inversion attacker.
pub struct GeiaAttacker {
    config: GeiaConfig,
    vocab: Vocabulary,
    store: ParamStore,
    params: Params,
}

/// Teacher-forcing batch, right-padded to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// Victim embeddings, one row per sentence (input position 0).
    pub embeddings: Mat,
    /// Token inputs `w_0 .. w_{u-1}` (input positions 1..=u).
    pub inputs: Vec<Vec<TokenId>>,
    /// `[w_0 .. w_{u-1}, <eos>]` padded with `None` to `seq_len`.
    pub targets: Vec<Vec<Option<TokenId>>>,
    pub seq_len: usize,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Length of input sequence `I` for a row (embedding slot included).
    pub fn input_len(&self, row: usize) -> usize {
        self.inputs[row].len() + 1
    }

    /// Length of target sequence `O` for a row (unmasked positions).
    pub fn target_len(&self, row: usize) -> usize {
        self.targets[row].iter().filter(|t| t.is_some()).count()
    }

    /// `true` where the loss is taken.
    pub fn mask(&self, row: usize) -> Vec<bool> {
        self.targets[row].iter().map(Option::is_some).collect()
    }
}

fn linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize, std: f64) -> Linear {
    Linear {
        w: store.add(format!("{name}.w"), init::normal(rng, rows, cols, std)),
        b: store.add(format!("{name}.b"), init::zeros(1, cols)),
    }
}

fn norm(store: &mut ParamStore, name: &str, width: usize) -> Norm {
    Norm {
        gain: store.add(format!("{name}.g"), init::ones(1, width)),
        bias: store.add(format!("{name}.b"), init::zeros(1, width)),
    }
}

const INIT_STD: f64 = 0.02;

impl GeiaAttacker {
    pub fn new(config: GeiaConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.width;
        let v = vocab.len();
        let residual_std = INIT_STD / (2.0 * config.layers.max(1) as f64).sqrt();
        let align = linear(
            &mut store,
            &mut rng,
            "align",
            config.embedding_dim,
            d,
            1.0 / (config.embedding_dim as f64).sqrt(),
        );
        let tokens = store.add("tokens", init::normal(&mut rng, v, d, INIT_STD));
        let positions = store.add("positions", init::normal(&mut rng, config.max_positions, d, INIT_STD));
        let blocks = (0..config.layers)
            .map(|l| Block {
                ln1: norm(&mut store, &format!("h{l}.ln1"), d),
                qkv: linear(&mut store, &mut rng, &format!("h{l}.qkv"), d, 3 * d, INIT_STD),
                proj: linear(&mut store, &mut rng, &format!("h{l}.proj"), d, d, residual_std),
                ln2: norm(&mut store, &format!("h{l}.ln2"), d),
                fc: linear(&mut store, &mut rng, &format!("h{l}.fc"), d, 4 * d, INIT_STD),
                out: linear(&mut store, &mut rng, &format!("h{l}.out"), 4 * d, d, residual_std),
            })
            .collect();
        let ln_f = norm(&mut store, "ln_f", d);
        let head = linear(&mut store, &mut rng, "head", d, v, INIT_STD);
        Ok(GeiaAttacker {
            config,
            vocab,
            store,
            params: Params {
                align,
                tokens,
                positions,
                blocks,
                ln_f,
                head,
            },
        })
    }

    /// Rebuilds an attacker around previously trained parameters.
    pub fn from_store(config: GeiaConfig, vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(config, vocab)?;
        training::check_layout(&fresh.store, &store)?;
        fresh.store = store;
        Ok(fresh)
    }

    pub fn config(&self) -> &GeiaConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Sets the output head to zero so every position predicts uniformly.
    pub fn zero_output_head(&mut self) {
        self.store.get_mut(self.params.head.w).fill(0.0);
        self.store.get_mut(self.params.head.b).fill(0.0);
    }

    pub fn align_params(&self) -> [ParamId; 2] {
        [self.params.align.w, self.params.align.b]
    }

    pub fn head_params(&self) -> [ParamId; 2] {
        [self.params.head.w, self.params.head.b]
    }

    /// Builds the teacher-forcing batch for aligned lists of embeddings and
    /// indexed sentences.
    pub fn build_training_batch(
        &self,
        embeddings: &[SentenceEmbedding],
        sentences: &[AnnotatedSentence],
    ) -> Result<TrainingBatch> {
        self.batch(&training::samples(embeddings, sentences)?)
    }

    fn batch(&self, samples: &[Sample<'_>]) -> Result<TrainingBatch> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let d_v = self.config.embedding_dim;
        let mut embeddings = Mat::zeros((samples.len(), d_v));
        let mut inputs = Vec::with_capacity(samples.len());
        let mut max_u = 0;
        for (r, s) in samples.iter().enumerate() {
            if s.embedding.len() != d_v {
                return Err(Error::LengthMismatch(format!(
                    "embedding has {} entries, attacker expects {d_v}",
                    s.embedding.len()
                )));
            }
            if s.tokens.is_empty() {
                return Err(Error::EmptyText);
            }
            if let Some(&bad) = s
                .tokens
                .iter()
                .find(|&&t| t as usize >= self.vocab.len() || t == Vocabulary::PAD_ID || t == Vocabulary::EOS_ID)
            {
                return Err(Error::InvalidArgument(format!(
                    "token id {bad} cannot appear in a sentence"
                )));
            }
            for (dst, &src) in embeddings.row_mut(r).iter_mut().zip(s.embedding) {
                *dst = src as f64;
            }
            max_u = max_u.max(s.tokens.len());
            inputs.push(s.tokens.to_vec());
        }
        let seq_len = max_u + 1;
        if seq_len > self.config.max_positions {
            return Err(Error::InvalidArgument(format!(
                "sentence of {max_u} tokens exceeds the decoder's {} positions",
                self.config.max_positions
            )));
        }
        let targets = inputs
            .iter()
            .map(|toks| {
                let mut t: Vec<Option<TokenId>> = toks.iter().copied().map(Some).collect();
                t.push(Some(Vocabulary::EOS_ID));
                t.resize(seq_len, None);
                t
            })
            .collect();
        Ok(TrainingBatch {
            embeddings,
            inputs,
            targets,
            seq_len,
        })
    }

    /// Final hidden states, `(batch * seq_len, width)`.
    fn hidden<'s>(&'s self, g: &mut Graph<'s>, embeddings: &Mat, inputs: &[&[TokenId]], seq_len: usize) -> Var {
        let p = &self.params;
        let batch = inputs.len();
        let e = g.constant(embeddings.clone());
        let (aw, ab) = (g.param(p.align.w), g.param(p.align.b));
        let aligned = g.linear(e, aw, ab);
        let table = g.param(p.tokens);
        let mut index = Vec::with_capacity(batch * seq_len);
        for (b, toks) in inputs.iter().enumerate() {
            index.push((0, b));
            for t in 1..seq_len {
                let tok = toks.get(t - 1).copied().unwrap_or(Vocabulary::PAD_ID);
                index.push((1, tok as usize));
            }
        }
        let x = g.gather_rows(&[aligned, table], index);
        let pos = g.param(p.positions);
        let pos = g.gather_rows(&[pos], (0..batch * seq_len).map(|i| (0, i % seq_len)).collect());
        let mut x = g.add(x, pos);
        for blk in &p.blocks {
            let (lg, lb) = (g.param(blk.ln1.gain), g.param(blk.ln1.bias));
            let h = g.layer_norm(x, lg, lb);
            let (w, b) = (g.param(blk.qkv.w), g.param(blk.qkv.b));
            let qkv = g.linear(h, w, b);
            let a = g.attention(qkv, batch, seq_len, self.config.heads, true);
            let (w, b) = (g.param(blk.proj.w), g.param(blk.proj.b));
            let a = g.linear(a, w, b);
            x = g.add(x, a);
            let (lg, lb) = (g.param(blk.ln2.gain), g.param(blk.ln2.bias));
            let h = g.layer_norm(x, lg, lb);
            let (w, b) = (g.param(blk.fc.w), g.param(blk.fc.b));
            let f = g.linear(h, w, b);
            let f = g.gelu(f);
            let (w, b) = (g.param(blk.out.w), g.param(blk.out.b));
            let f = g.linear(f, w, b);
            x = g.add(x, f);
        }
        let (lg, lb) = (g.param(p.ln_f.gain), g.param(p.ln_f.bias));
        g.layer_norm(x, lg, lb)
    }

    fn head<'s>(&'s self, g: &mut Graph<'s>, h: Var) -> Var {
        let (w, b) = (g.param(self.params.head.w), g.param(self.params.head.b));
        g.linear(h, w, b)
    }

    fn loss_node<'s>(&'s self, g: &mut Graph<'s>, batch: &TrainingBatch) -> Var {
        let inputs: Vec<&[TokenId]> = batch.inputs.iter().map(Vec::as_slice).collect();
        let h = self.hidden(g, &batch.embeddings, &inputs, batch.seq_len);
        let logits = self.head(g, h);
        let targets = batch.targets.iter().flatten().map(|t| t.map(|t| t as usize)).collect();
        g.cross_entropy(logits, targets)
    }

    /// Mean token cross-entropy over the unmasked target positions.
    pub fn teacher_forced_loss(&self, batch: &TrainingBatch) -> f64 {
        let mut g = Graph::new(&self.store);
        let l = self.loss_node(&mut g, batch);
        g.scalar(l)
    }

    /// Logits at every input position for one sentence, `(u + 1, |V|)`.
    pub fn position_logits(&self, embedding: &[f32], tokens: &[TokenId]) -> Result<Mat> {
        let b = self.batch(&[Sample { embedding, tokens }])?;
        let mut g = Graph::new(&self.store);
        let h = self.hidden(&mut g, &b.embeddings, &[tokens], b.seq_len);
        let l = self.head(&mut g, h);
        Ok(g.value(l).clone())
    }

    /// Summed negative log-likelihood of `tokens` followed by `<eos>`, and
    /// the number of predicted positions (`u + 1`).
    pub fn sequence_nll(&self, embedding: &[f32], tokens: &[TokenId]) -> Result<(f64, usize)> {
        let b = self.batch(&[Sample { embedding, tokens }])?;
        let n = b.target_len(0);
        Ok((self.teacher_forced_loss(&b) * n as f64, n))
    }

    /// Next-token log-probabilities after each prefix; all prefixes must
    /// share one length. `<pad>` is never a valid continuation.
    fn next_log_probs(&self, embedding: &[f64], prefixes: &[Vec<TokenId>]) -> Vec<Vec<f64>> {
        let seq_len = prefixes[0].len() + 1;
        let mut e = Mat::zeros((prefixes.len(), embedding.len()));
        for mut row in e.rows_mut() {
            row.assign(&ndarray::ArrayView1::from(embedding));
        }
        let inputs: Vec<&[TokenId]> = prefixes.iter().map(Vec::as_slice).collect();
        let mut g = Graph::new(&self.store);
        let h = self.hidden(&mut g, &e, &inputs, seq_len);
        let last = g.gather_rows(
            &[h],
            (0..prefixes.len()).map(|b| (0, b * seq_len + seq_len - 1)).collect(),
        );
        let logits = self.head(&mut g, last);
        g.value(logits)
            .rows()
            .into_iter()
            .map(|row| {
                let mut row = row.to_vec();
                row[Vocabulary::PAD_ID as usize] = f64::NEG_INFINITY;
                log_softmax(&mut row);
                row
            })
            .collect()
    }

    fn length_cap(&self, max_len: usize) -> usize {
        max_len.min(self.config.max_positions - 1)
    }

    fn embedding_f64(&self, embedding: &SentenceEmbedding) -> Result<Vec<f64>> {
        if embedding.dim() != self.config.embedding_dim {
            return Err(Error::LengthMismatch(format!(
                "embedding has {} entries, attacker expects {}",
                embedding.dim(),
                self.config.embedding_dim
            )));
        }
        Ok(embedding.to_f64())
    }

    /// Argmax decoding (ties to the lowest id) until `<eos>` or `max_len`
    /// tokens.
    pub fn decode_greedy(&self, embedding: &SentenceEmbedding, max_len: usize) -> Result<InversionResult> {
        let e = self.embedding_f64(embedding)?;
        let (tokens, score) = self.greedy(&e, self.length_cap(max_len));
        Ok(InversionResult::sequence(tokens, &self.vocab, Some(score)))
    }

    fn greedy(&self, e: &[f64], cap: usize) -> (Vec<TokenId>, f64) {
        let mut tokens = Vec::new();
        let mut score = 0.0;
        while tokens.len() < cap {
            let lp = self.next_log_probs(e, std::slice::from_ref(&tokens)).remove(0);
            let best = argmax(&lp);
            score += lp[best];
            if best as TokenId == Vocabulary::EOS_ID {
                break;
            }
            tokens.push(best as TokenId);
        }
        (tokens, score)
    }

    /// Beam search scored by unnormalized total log-probability. The greedy
    /// path is always among the final candidates, so a wider beam never
    /// returns a lower-scoring sequence than `beam_size = 1`.
    pub fn decode_beam(
        &self,
        embedding: &SentenceEmbedding,
        beam_size: usize,
        max_len: usize,
    ) -> Result<InversionResult> {
        if beam_size == 0 || max_len == 0 {
            return Err(Error::InvalidArgument("beam_size and max_len must be positive".into()));
        }
        let e = self.embedding_f64(embedding)?;
        let cap = self.length_cap(max_len);
        let (tokens, score) = self.beam(&e, beam_size, cap);
        let (tokens, score) = if beam_size > 1 {
            let (gt, gs) = self.greedy(&e, cap);
            if gs > score {
                (gt, gs)
            } else {
                (tokens, score)
            }
        } else {
            (tokens, score)
        };
        Ok(InversionResult::sequence(tokens, &self.vocab, Some(score)))
    }

    fn beam(&self, e: &[f64], beam_size: usize, cap: usize) -> (Vec<TokenId>, f64) {
        let eos = Vocabulary::EOS_ID;
        let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
        let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();
        for _ in 0..cap {
            let prefixes: Vec<Vec<TokenId>> = live.iter().map(|h| h.0.clone()).collect();
            let lps = self.next_log_probs(e, &prefixes);
            let mut cands: Vec<(Vec<TokenId>, f64)> = Vec::new();
            for ((prefix, score), lp) in live.iter().zip(&lps) {
                for tok in top_k(lp, beam_size + 1) {
                    let mut t = prefix.clone();
                    t.push(tok as TokenId);
                    cands.push((t, score + lp[tok]));
                }
            }
            cands.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            live.clear();
            for (rank, (mut toks, score)) in cands.into_iter().enumerate() {
                if score == f64::NEG_INFINITY {
                    break;
                }
                if toks.last() == Some(&eos) {
                    if rank < beam_size {
                        toks.pop();
                        finished.push((toks, score));
                    }
                } else if live.len() < beam_size {
                    live.push((toks, score));
                }
                if live.len() == beam_size && rank + 1 >= beam_size {
                    break;
                }
            }
            let best_finished = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
            if live.is_empty() || best_finished >= best_live {
                break;
            }
        }
        finished.extend(live);
        finished
            .into_iter()
            .reduce(|best, h| if h.1 > best.1 { h } else { best })
            .unwrap_or((Vec::new(), f64::NEG_INFINITY))
    }

    /// Nucleus sampling: at each step sample from the smallest
    /// highest-probability prefix of the temperature-scaled distribution
    /// whose mass reaches `top_p`.
    pub fn decode_nucleus(
        &self,
        embedding: &SentenceEmbedding,
        top_p: f64,
        temperature: f64,
        seed: u64,
        max_len: usize,
    ) -> Result<InversionResult> {
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!("top_p {top_p} outside (0, 1]")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature {temperature} must be positive"
            )));
        }
        let e = self.embedding_f64(embedding)?;
        let cap = self.length_cap(max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::new();
        let mut score = 0.0;
        while tokens.len() < cap {
            let lp = self.next_log_probs(&e, std::slice::from_ref(&tokens)).remove(0);
            let tok = nucleus_pick(&lp, top_p, temperature, rng.random::<f64>());
            score += lp[tok];
            if tok as TokenId == Vocabulary::EOS_ID {
                break;
            }
            tokens.push(tok as TokenId);
        }
        Ok(InversionResult::sequence(tokens, &self.vocab, Some(score)))
    }
}

/// Index of a sample drawn with uniform variate `u` from the top-`top_p`
/// nucleus of `softmax(log_probs / temperature)`.
pub fn nucleus_pick(log_probs: &[f64], top_p: f64, temperature: f64, u: f64) -> usize {
    let mut scaled: Vec<f64> = log_probs.iter().map(|l| l / temperature).collect();
    log_softmax(&mut scaled);
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    let mut nucleus = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        let p = scaled[i].exp();
        nucleus.push((i, p));
        mass += p;
        if mass >= top_p {
            break;
        }
    }
    let mut target = u * mass;
    for &(i, p) in &nucleus {
        if target < p {
            return i;
        }
        target -= p;
    }
    nucleus.last().expect("non-empty nucleus").0
}

fn log_softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for x in row.iter_mut() {
        *x -= lse;
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries, ties to the lower index.
fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    let k = k.min(xs.len());
    let cmp = |a: &usize, b: &usize| xs[*b].total_cmp(&xs[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

impl Trainable for GeiaAttacker {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss<'s>(&'s self, g: &mut Graph<'s>, batch: &[Sample<'_>]) -> Result<Var> {
        let b = self.batch(batch)?;
        Ok(self.loss_node(g, &b))
    }
}

/// Teacher-forced training with the dev-best checkpoint kept.
pub fn train(
    attacker: &mut GeiaAttacker,
    train: &[Sample<'_>],
    dev: &[Sample<'_>],
    config: &TrainConfig,
    on_epoch: impl FnMut(&training::EpochRecord),
) -> Result<FitOutcome> {
    training::fit(attacker, train, dev, config, on_epoch)
}
