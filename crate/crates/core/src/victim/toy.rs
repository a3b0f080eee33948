use std::str::FromStr;

use embinv_autograd::{init, Graph, Mat, ParamId, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{SentenceEmbedding, Victim};
use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

const INIT_BOUND: f64 = 0.1;
const MAX_POSITIONS: usize = 128;
const BLOCKS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VictimKind {
    /// Mean of a fixed random token-embedding table.
    BagOfEmbeddings,
    /// Two bidirectional self-attention blocks, mean-pooled.
    TinyTransformer,
}

impl VictimKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VictimKind::BagOfEmbeddings => "bag-of-embeddings",
            VictimKind::TinyTransformer => "tiny-transformer",
        }
    }
}

impl FromStr for VictimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bag-of-embeddings" | "bag" => Ok(VictimKind::BagOfEmbeddings),
            "tiny-transformer" | "transformer" => Ok(VictimKind::TinyTransformer),
            other => Err(Error::InvalidArgument(format!("unknown victim kind {other:?}"))),
        }
    }
}

struct Block {
    ln1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    proj: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    fc: (ParamId, ParamId),
    out: (ParamId, ParamId),
}

/// Deterministic frozen encoder with weights drawn once from a seeded
/// uniform(-0.1, 0.1) initializer.
pub struct ToyVictim {
    id: String,
    kind: VictimKind,
    dim: usize,
    heads: usize,
    vocab: Vocabulary,
    store: ParamStore,
    table: ParamId,
    positions: Option<ParamId>,
    blocks: Vec<Block>,
    final_ln: Option<(ParamId, ParamId)>,
}

pub fn make_toy_victim(kind: VictimKind, dim: usize, seed: u64, vocab: Vocabulary) -> Result<ToyVictim> {
    ToyVictim::new(kind, dim, seed, vocab)
}

impl ToyVictim {
    pub fn new(kind: VictimKind, dim: usize, seed: u64, vocab: Vocabulary) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("victim dimension {dim} < 2")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let u = |rng: &mut ChaCha8Rng, r, c| init::uniform(rng, r, c, INIT_BOUND);
        let table = store.add("table", u(&mut rng, vocab.len(), dim));
        let mut positions = None;
        let mut blocks = Vec::new();
        let mut final_ln = None;
        if kind == VictimKind::TinyTransformer {
            positions = Some(store.add("positions", u(&mut rng, MAX_POSITIONS, dim)));
            for l in 0..BLOCKS {
                let mut pair = |store: &mut ParamStore, name: &str, rows, cols| {
                    (
                        store.add(format!("b{l}.{name}.w"), u(&mut rng, rows, cols)),
                        store.add(format!("b{l}.{name}.b"), u(&mut rng, 1, cols)),
                    )
                };
                let qkv = pair(&mut store, "qkv", dim, 3 * dim);
                let proj = pair(&mut store, "proj", dim, dim);
                let fc = pair(&mut store, "fc", dim, 4 * dim);
                let out = pair(&mut store, "out", 4 * dim, dim);
                let ln = |store: &mut ParamStore, name: &str| {
                    (
                        store.add(format!("b{l}.{name}.g"), init::ones(1, dim)),
                        store.add(format!("b{l}.{name}.b"), init::zeros(1, dim)),
                    )
                };
                let ln1 = ln(&mut store, "ln1");
                let ln2 = ln(&mut store, "ln2");
                blocks.push(Block {
                    ln1,
                    qkv,
                    proj,
                    ln2,
                    fc,
                    out,
                });
            }
            final_ln = Some((
                store.add("ln_f.g", init::ones(1, dim)),
                store.add("ln_f.b", init::zeros(1, dim)),
            ));
        }
        let id = format!("{}-d{dim}-s{seed}-{}", kind.as_str(), &vocab.hash()[..12]);
        Ok(ToyVictim {
            id,
            kind,
            dim,
            heads: if dim.is_multiple_of(2) { 2 } else { 1 },
            vocab,
            store,
            table,
            positions,
            blocks,
            final_ln,
        })
    }

    pub fn kind(&self) -> VictimKind {
        self.kind
    }

    fn encode(&self, ids: &[TokenId]) -> Vec<f64> {
        if ids.is_empty() {
            return vec![0.0; self.dim];
        }
        let ids = &ids[..ids.len().min(MAX_POSITIONS)];
        let mut g = Graph::new(&self.store);
        let table = g.param(self.table);
        let mut x = g.gather_rows(&[table], ids.iter().map(|&t| (0, t as usize)).collect());
        if let Some(pos) = self.positions {
            let pos = g.param(pos);
            let p = g.gather_rows(&[pos], (0..ids.len()).map(|i| (0, i)).collect());
            x = g.add(x, p);
            for b in &self.blocks {
                let (lg, lb) = (g.param(b.ln1.0), g.param(b.ln1.1));
                let h = g.layer_norm(x, lg, lb);
                let (w, bias) = (g.param(b.qkv.0), g.param(b.qkv.1));
                let qkv = g.linear(h, w, bias);
                let a = g.attention(qkv, 1, ids.len(), self.heads, false);
                let (w, bias) = (g.param(b.proj.0), g.param(b.proj.1));
                let a = g.linear(a, w, bias);
                x = g.add(x, a);
                let (lg, lb) = (g.param(b.ln2.0), g.param(b.ln2.1));
                let h = g.layer_norm(x, lg, lb);
                let (w, bias) = (g.param(b.fc.0), g.param(b.fc.1));
                let f = g.linear(h, w, bias);
                let f = g.gelu(f);
                let (w, bias) = (g.param(b.out.0), g.param(b.out.1));
                let f = g.linear(f, w, bias);
                x = g.add(x, f);
            }
            let (lg, lb) = self.final_ln.expect("transformer has a final norm");
            let (lg, lb) = (g.param(lg), g.param(lb));
            x = g.layer_norm(x, lg, lb);
        }
        let v: &Mat = g.value(x);
        let n = v.nrows() as f64;
        v.sum_axis(ndarray::Axis(0)).iter().map(|s| s / n).collect()
    }
}

impl Victim for ToyVictim {
    fn victim_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<SentenceEmbedding>> {
        texts
            .iter()
            .map(|t| {
                let ids = self.vocab.ids_for(&crate::corpus::words(t));
                let v = self.encode(&ids).into_iter().map(|x| x as f32).collect();
                SentenceEmbedding::new(v, self.id.clone())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{annotate, CorpusRecord, StopWords};

    fn vocab() -> Vocabulary {
        let s = annotate(
            CorpusRecord {
                text: "alice likes bob and carol likes dave".into(),
                entities: vec![],
                context: None,
            },
            &StopWords::default(),
        );
        Vocabulary::build(&[s], 100).unwrap()
    }

    fn one(v: &dyn Victim, text: &str) -> Vec<f32> {
        v.embed_texts(&[text]).unwrap().pop().unwrap().values
    }

    #[test]
    fn bag_of_one_token_is_its_table_row() {
        let vocab = vocab();
        let v = make_toy_victim(VictimKind::BagOfEmbeddings, 6, 4, vocab.clone()).unwrap();
        let id = vocab.id("bob").unwrap();
        let row: Vec<f32> = v
            .store
            .get(v.table)
            .row(id as usize)
            .iter()
            .map(|&x| x as f32)
            .collect();
        assert_eq!(one(&v, "bob"), row);
    }

    #[test]
    fn bag_is_order_invariant_but_transformer_is_not() {
        let bag = make_toy_victim(VictimKind::BagOfEmbeddings, 8, 1, vocab()).unwrap();
        assert_eq!(one(&bag, "alice likes bob"), one(&bag, "bob likes alice"));
        let tr = make_toy_victim(VictimKind::TinyTransformer, 8, 1, vocab()).unwrap();
        assert_ne!(one(&tr, "alice likes bob"), one(&tr, "bob likes alice"));
    }

    #[test]
    fn frozen_and_finite() {
        for kind in [VictimKind::BagOfEmbeddings, VictimKind::TinyTransformer] {
            let v = make_toy_victim(kind, 7, 9, vocab()).unwrap();
            let a = one(&v, "carol likes dave and zed");
            assert_eq!(a.len(), 7);
            assert!(a.iter().all(|x| x.is_finite()));
            assert_eq!(a, one(&v, "carol likes dave and zed"));
            let w = make_toy_victim(kind, 7, 9, vocab()).unwrap();
            assert_eq!(a, one(&w, "carol likes dave and zed"));
            assert_eq!(v.victim_id(), w.victim_id());
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(make_toy_victim(VictimKind::BagOfEmbeddings, 1, 0, vocab()).is_err());
        assert!("lstm".parse::<VictimKind>().is_err());
        assert_eq!("bag".parse::<VictimKind>().unwrap(), VictimKind::BagOfEmbeddings);
    }
}
