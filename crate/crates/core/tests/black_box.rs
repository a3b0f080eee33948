//! The attack pipeline only needs `Victim::embed_texts`: a victim whose
//! parameters are private to this file drives every attacker end to end.

use std::collections::HashMap;

use embinv_core::corpus::{self, StopWords, Vocabulary};
use embinv_core::geia::{self, GeiaAttacker, GeiaConfig};
use embinv_core::metrics::{self, MatchMode};
use embinv_core::mlc::{self, MlcAttacker};
use embinv_core::msp::{self, MspAttacker, MspConfig};
use embinv_core::training::samples;
use embinv_core::victim::embed_all;
use embinv_core::{AnnotatedSentence, SentenceEmbedding, TrainConfig, Victim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sums per-word random vectors drawn lazily from a secret seed.
struct SecretVictim {
    table: HashMap<String, Vec<f32>>,
}

impl SecretVictim {
    fn new(words: impl Iterator<Item = String>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ec2e7);
        let table = words
            .map(|w| (w, (0..12).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
            .collect();
        SecretVictim { table }
    }
}

impl Victim for SecretVictim {
    fn victim_id(&self) -> &str {
        "secret"
    }

    fn dim(&self) -> usize {
        12
    }

    fn embed_texts(&self, texts: &[&str]) -> embinv_core::Result<Vec<SentenceEmbedding>> {
        texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0f32; 12];
                for (i, w) in corpus::words(t).iter().enumerate() {
                    if let Some(row) = self.table.get(w) {
                        for (d, x) in v.iter_mut().zip(row) {
                            *d += x * (1.0 + 0.1 * i as f32);
                        }
                    }
                }
                SentenceEmbedding::new(v, "secret")
            })
            .collect()
    }
}

fn corpus() -> (Vec<AnnotatedSentence>, Vocabulary) {
    let names = ["alice", "bob", "carol", "dave"];
    let likes = ["tea", "chess", "rain", "music"];
    let mut body = String::new();
    for n in names {
        for l in likes {
            body.push_str(&format!(
                "{{\"text\": \"my name is {n} and i like {l}\", \"entities\": [\"{n}\"]}}\n"
            ));
        }
    }
    let stop: StopWords = ["my", "is", "and", "i"].into_iter().collect();
    let mut s = corpus::parse_corpus(&body, &stop, std::path::Path::new("mem")).unwrap();
    let vocab = Vocabulary::build(&s, 64).unwrap();
    corpus::index_corpus(&mut s, &vocab);
    (s, vocab)
}

#[test]
fn every_attacker_runs_against_an_opaque_victim() {
    let (sentences, vocab) = corpus();
    let victim = SecretVictim::new(sentences.iter().flat_map(|s| s.words.clone()));
    let embeddings = embed_all(&victim, &sentences, 5).unwrap();
    let data = samples(&embeddings, &sentences).unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        batch_size: 8,
        epochs: 30,
        ..Default::default()
    };
    let refs: Vec<Vec<u32>> = sentences.iter().map(|s| s.token_ids.clone()).collect();

    let mut g = GeiaAttacker::new(
        GeiaConfig {
            width: 32,
            layers: 1,
            heads: 2,
            max_positions: 16,
            ..GeiaConfig::new(12)
        },
        vocab.clone(),
    )
    .unwrap();
    let fit = geia::train(&mut g, &data, &[], &cfg, |_| {}).unwrap();
    assert_eq!(fit.log.len(), 30);
    assert!(fit.best_loss < fit.log[0].train_loss);
    let outs: Vec<_> = embeddings.iter().map(|e| g.decode_beam(e, 3, 12).unwrap()).collect();
    let preds: Vec<Vec<u32>> = outs.iter().map(|o| o.tokens.clone()).collect();
    let prf = micro_prf_ok(&preds, &refs);
    assert!(prf > 0.5, "generative F1 {prf}");
    let texts: Vec<String> = outs.iter().map(|o| o.text.clone()).collect();
    assert!(metrics::nerr(&texts, &sentences).unwrap().is_some());

    let mut m = MlcAttacker::new(12, vocab.clone(), 0).unwrap();
    mlc::train(&mut m, &data, &[], &cfg, |_| {}).unwrap();
    let sweep = mlc::sweep_thresholds(&m, &embeddings, &refs, 0.05).unwrap();
    assert_eq!(sweep.points.len(), 21);

    let mut s = MspAttacker::new(
        MspConfig {
            hidden: 16,
            ..MspConfig::new(12)
        },
        vocab,
    )
    .unwrap();
    msp::train(&mut s, &data, &[], &cfg, |_| {}).unwrap();
    let sets: Vec<Vec<u32>> = embeddings.iter().map(|e| s.predict(e).unwrap().tokens).collect();
    assert!(sets.iter().all(|t| t.len() <= 10));
    assert!(micro_prf_ok(&sets, &refs) > 0.0);
}

fn micro_prf_ok(p: &[Vec<u32>], r: &[Vec<u32>]) -> f64 {
    metrics::micro_prf(p, r, MatchMode::Multiset).unwrap().f1
}
