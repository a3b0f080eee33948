//! Experiment stages: prepare → embed → train → invert → (sweep) → evaluate.
//!
//! Each stage persists its output under `output.dir` so the CLI can run
//! stages one at a time; [`run_experiment`] chains them. Embeddings live in
//! a shared cache (`EMBINV_CACHE_DIR`, default `.embinv-cache`) keyed by
//! victim and corpus, so a rerun never queries the victim again.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use embinv_core::checkpoint::{self, Architecture, Attacker, AttackerKind, CheckpointManifest};
use embinv_core::corpus::{self, AnnotatedSentence, StopWords, TokenId, Vocabulary};
use embinv_core::geia::{self, GeiaAttacker, GeiaConfig};
use embinv_core::inversion::{InversionKind, InversionResult};
use embinv_core::metrics::{self, MatchMode, MetricsReport, RougeVariant};
use embinv_core::mlc::{self, Sweep};
use embinv_core::msp;
use embinv_core::training::{samples, EpochRecord, Sample, TrainConfig};
use embinv_core::victim::{embed_corpus_cached, make_toy_victim, RemoteConfig, RemoteVictim};
use embinv_core::{SentenceEmbedding, Victim};
use serde::{Deserialize, Serialize};

use crate::config::{DecodeMethod, EvalSplit, ExperimentConfig, VictimSource};
use crate::sweep_csv;

pub const CONFIG_FILE: &str = "config.txt";
pub const CONFIG_HASH_FILE: &str = "config.sha256";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const INVERSIONS_FILE: &str = "inversions.jsonl";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CACHE_ENV: &str = "EMBINV_CACHE_DIR";

/// Loaded, indexed and split corpus.
pub struct Prepared {
    pub sentences: Vec<AnnotatedSentence>,
    pub vocab: Vocabulary,
    pub stopwords: StopWords,
    /// Corpus positions of the train, dev and test parts.
    pub splits: [Vec<usize>; 3],
    pub corpus_hash: String,
}

impl Prepared {
    pub fn split(&self, which: EvalSplit) -> &[usize] {
        match which {
            EvalSplit::Train => &self.splits[0],
            EvalSplit::Dev => &self.splits[1],
            EvalSplit::Test => &self.splits[2],
        }
    }
}

pub fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".embinv-cache"))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes the resolved configuration and its hash into the output directory.
pub fn write_config(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    write_file(&cfg.output_dir.join(CONFIG_FILE), cfg.canonical())?;
    write_file(&cfg.output_dir.join(CONFIG_HASH_FILE), format!("{}\n", cfg.hash()))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mut sentences = corpus::load_corpus(&cfg.corpus_path, &cfg.stopwords_path)?;
    let stopwords = StopWords::load(&cfg.stopwords_path)?;
    let vocab = Vocabulary::build(&sentences, cfg.max_vocab)?;
    corpus::index_corpus(&mut sentences, &vocab);
    let splits = corpus::split_indices(sentences.len(), cfg.ratios, cfg.seed)?;
    let corpus_hash = corpus::corpus_hash(&sentences);
    Ok(Prepared {
        sentences,
        vocab,
        stopwords,
        splits,
        corpus_hash,
    })
}

pub fn build_victim(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<Box<dyn Victim>> {
    Ok(match cfg.victim.source {
        VictimSource::Toy(kind) => Box::new(make_toy_victim(kind, cfg.victim.dim, cfg.victim.seed, vocab.clone())?),
        VictimSource::Remote => Box::new(RemoteVictim::new(RemoteConfig {
            url: cfg.victim.url.clone(),
            victim_id: cfg.victim.id.clone(),
            dim: cfg.victim.dim,
            timeout: Duration::from_secs(cfg.victim.timeout_secs),
            retries: cfg.victim.retries,
        })?),
    })
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Location of the embedding cache for a victim/corpus pair.
pub fn cache_path(victim_id: &str, corpus_hash: &str) -> PathBuf {
    cache_root().join(format!(
        "{}-{}.f32",
        file_safe(victim_id),
        &corpus_hash[..16.min(corpus_hash.len())]
    ))
}

/// Embeddings of the whole corpus, from the cache when available.
pub fn embed(prepared: &Prepared, victim: &dyn Victim) -> Result<Vec<SentenceEmbedding>> {
    let root = cache_root();
    fs::create_dir_all(&root).with_context(|| format!("creating cache {}", root.display()))?;
    Ok(embed_corpus_cached(
        victim,
        &prepared.sentences,
        &cache_path(victim.victim_id(), &prepared.corpus_hash),
    )?)
}

pub fn architecture(cfg: &ExperimentConfig, embedding_dim: usize) -> Architecture {
    let a = &cfg.attacker;
    Architecture {
        kind: a.kind,
        embedding_dim,
        layers: a.layers,
        heads: a.heads,
        width: a.width,
        max_positions: a.max_positions,
        hidden: a.hidden,
        steps: a.steps,
        init_seed: cfg.seed,
    }
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        lr: cfg.attacker.lr,
        batch_size: cfg.attacker.batch,
        epochs: cfg.attacker.epochs,
        clip_norm: (cfg.attacker.clip > 0.0).then_some(cfg.attacker.clip),
        seed: cfg.seed,
    }
}

fn pick<'a>(
    embeddings: &'a [SentenceEmbedding],
    prepared: &'a Prepared,
    idx: &[usize],
) -> (Vec<SentenceEmbedding>, Vec<AnnotatedSentence>) {
    (
        idx.iter().map(|&i| embeddings[i].clone()).collect(),
        idx.iter().map(|&i| prepared.sentences[i].clone()).collect(),
    )
}

/// Trains the configured attacker, or reuses the checkpoint in the output
/// directory when it was produced by the same training settings.
pub fn train(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    embeddings: &[SentenceEmbedding],
    victim_id: &str,
) -> Result<(Attacker, CheckpointManifest)> {
    let dir = cfg.output_dir.join(CHECKPOINT_DIR);
    let training_hash = cfg.training_hash();
    if dir.join(checkpoint::MANIFEST_FILE).exists() {
        let existing = checkpoint::read_manifest(&dir)?;
        if existing.config_hash == training_hash {
            log::info!("reusing checkpoint {}", dir.display());
            return Ok(checkpoint::load(&dir, Some(&prepared.vocab.hash()), Some(victim_id))?);
        }
        log::info!("checkpoint {} is from different settings; retraining", dir.display());
    }
    let d_v = embeddings
        .first()
        .map(SentenceEmbedding::dim)
        .ok_or_else(|| anyhow!("no embeddings"))?;
    let arch = architecture(cfg, d_v);
    let (train_e, train_s) = pick(embeddings, prepared, &prepared.splits[0]);
    let (dev_e, dev_s) = pick(embeddings, prepared, &prepared.splits[1]);
    let train_data = samples(&train_e, &train_s)?;
    let dev_data = samples(&dev_e, &dev_s)?;
    let tc = train_config(cfg);
    let log_path = cfg.output_dir.join(TRAIN_LOG_FILE);
    let mut log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log_err = None;
    let mut on_epoch = |r: &EpochRecord| {
        let line = serde_json::to_string(r).expect("serializable record");
        if let Err(e) = writeln!(log_file, "{line}") {
            log_err.get_or_insert(e);
        }
    };
    let mut attacker = Attacker::new(&arch, prepared.vocab.clone())?;
    let outcome = match &mut attacker {
        Attacker::Geia(a) => geia::train(a, &train_data, &dev_data, &tc, &mut on_epoch)?,
        Attacker::Mlc(a) => mlc::train(a, &train_data, &dev_data, &tc, &mut on_epoch)?,
        Attacker::Msp(a) => msp::train(a, &train_data, &dev_data, &tc, &mut on_epoch)?,
    };
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let manifest = CheckpointManifest {
        arch,
        vocab_hash: prepared.vocab.hash(),
        victim_id: victim_id.to_string(),
        epoch: outcome.best_epoch,
        dev_loss: outcome.best_loss,
        config_hash: training_hash,
    };
    checkpoint::save(&dir, &attacker, &manifest)?;
    Ok((attacker, manifest))
}

pub fn load_checkpoint(cfg: &ExperimentConfig, prepared: &Prepared, victim_id: &str) -> Result<Attacker> {
    let dir = cfg.output_dir.join(CHECKPOINT_DIR);
    let (attacker, _) = checkpoint::load(&dir, Some(&prepared.vocab.hash()), Some(victim_id))
        .with_context(|| format!("loading {}", dir.display()))?;
    Ok(attacker)
}

/// One line of the inversion dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionRecord {
    /// Position of the sentence in the corpus file.
    pub index: usize,
    pub reference: String,
    pub kind: InversionKind,
    pub tokens: Vec<TokenId>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Decision threshold used for a set prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

pub fn parse_inversions(text: &str) -> Result<Vec<InversionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("inversion dump line {}", i + 1)))
        .collect()
}

/// Threshold maximizing dev-split F1 for a multi-label attacker.
pub fn choose_threshold(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    embeddings: &[SentenceEmbedding],
    attacker: &mlc::MlcAttacker,
) -> Result<f64> {
    let dev = if prepared.splits[1].is_empty() {
        &prepared.splits[0]
    } else {
        &prepared.splits[1]
    };
    let (e, s) = pick(embeddings, prepared, dev);
    let refs: Vec<Vec<TokenId>> = s.iter().map(|s| content(&s.token_ids)).collect();
    Ok(mlc::sweep_thresholds(attacker, &e, &refs, cfg.metrics.sweep_interval)?.best_threshold)
}

fn content(tokens: &[TokenId]) -> Vec<TokenId> {
    tokens.iter().copied().filter(|&t| !Vocabulary::is_special(t)).collect()
}

/// Inverts every sentence of the evaluation split and writes the dump.
pub fn invert(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    embeddings: &[SentenceEmbedding],
    attacker: &Attacker,
) -> Result<Vec<InversionRecord>> {
    let threshold = match attacker {
        Attacker::Mlc(m) => Some(choose_threshold(cfg, prepared, embeddings, m)?),
        _ => None,
    };
    let d = &cfg.decode;
    let mut records = Vec::new();
    for &i in prepared.split(cfg.metrics.split) {
        let e = &embeddings[i];
        let r: InversionResult = match attacker {
            Attacker::Geia(g) => match d.method {
                DecodeMethod::Beam => g.decode_beam(e, d.beam_size, d.max_len)?,
                DecodeMethod::Nucleus => {
                    g.decode_nucleus(e, d.top_p, d.temperature, d.seed.wrapping_add(i as u64), d.max_len)?
                }
            },
            Attacker::Mlc(m) => m.predict(e, threshold.expect("threshold chosen"))?,
            Attacker::Msp(m) => m.predict(e)?,
        };
        records.push(InversionRecord {
            index: i,
            reference: prepared.sentences[i].text.clone(),
            kind: r.kind,
            tokens: r.tokens,
            text: r.text,
            score: r.score,
            threshold,
        });
    }
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_file(&cfg.output_dir.join(INVERSIONS_FILE), out)?;
    Ok(records)
}

/// Threshold sweep on the evaluation split, written as `sweep.csv`.
pub fn sweep(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    embeddings: &[SentenceEmbedding],
    attacker: &mlc::MlcAttacker,
    victim_id: &str,
) -> Result<Sweep> {
    let (e, s) = pick(embeddings, prepared, prepared.split(cfg.metrics.split));
    let refs: Vec<Vec<TokenId>> = s.iter().map(|s| content(&s.token_ids)).collect();
    let sweep = mlc::sweep_thresholds(attacker, &e, &refs, cfg.metrics.sweep_interval)?;
    let rows: Vec<sweep_csv::SweepRow> = sweep
        .points
        .iter()
        .map(|p| sweep_csv::SweepRow {
            victim: victim_id.to_string(),
            threshold: p.threshold,
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
        })
        .collect();
    write_file(&cfg.output_dir.join(SWEEP_FILE), sweep_csv::write(&rows)?)?;
    Ok(sweep)
}

/// Unconditional decoder used for perplexity: a generative attacker whose
/// conditioning vector is a constant zero. Cached by corpus and settings.
pub fn fluency_model(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<GeiaAttacker> {
    let f = &cfg.metrics.fluency;
    let max_positions = cfg.attacker.max_positions;
    let key = format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}",
        prepared.corpus_hash,
        prepared.vocab.hash(),
        f.width,
        f.layers,
        f.heads,
        f.epochs,
        f.lr,
        f.batch,
        cfg.seed
    );
    use sha2::Digest;
    let digest = hex::encode(sha2::Sha256::digest(key.as_bytes()));
    let dir = cache_root().join(format!("fluency-{}", &digest[..16]));
    let arch = Architecture {
        kind: AttackerKind::Geia,
        embedding_dim: 1,
        layers: f.layers,
        heads: f.heads,
        width: f.width,
        max_positions,
        hidden: f.width,
        steps: 1,
        init_seed: cfg.seed,
    };
    if dir.join(checkpoint::MANIFEST_FILE).exists() {
        if let (Attacker::Geia(g), _) = checkpoint::load(&dir, Some(&prepared.vocab.hash()), Some("none"))? {
            return Ok(g);
        }
        bail!("fluency cache {} does not hold a decoder", dir.display());
    }
    let zero = [0.0f32];
    let data: Vec<Sample> = prepared.splits[0]
        .iter()
        .map(|&i| &prepared.sentences[i].token_ids)
        .filter(|t| !t.is_empty() && t.len() < max_positions)
        .map(|t| Sample {
            embedding: &zero,
            tokens: t,
        })
        .collect();
    let mut lm = GeiaAttacker::new(
        GeiaConfig {
            embedding_dim: 1,
            width: f.width,
            layers: f.layers,
            heads: f.heads,
            max_positions,
            seed: cfg.seed,
        },
        prepared.vocab.clone(),
    )?;
    let tc = TrainConfig {
        lr: f.lr,
        batch_size: f.batch,
        epochs: f.epochs,
        clip_norm: Some(1.0),
        seed: cfg.seed,
    };
    let outcome = geia::train(&mut lm, &data, &[], &tc, |_| {})?;
    let attacker = Attacker::Geia(lm);
    checkpoint::save(
        &dir,
        &attacker,
        &CheckpointManifest {
            arch,
            vocab_hash: prepared.vocab.hash(),
            victim_id: "none".into(),
            epoch: outcome.best_epoch,
            dev_loss: outcome.best_loss,
            config_hash: digest,
        },
    )?;
    match attacker {
        Attacker::Geia(g) => Ok(g),
        _ => unreachable!("constructed as a decoder"),
    }
}

/// Scores an inversion dump against the references of the evaluation split.
pub fn evaluate(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    records: &[InversionRecord],
    victim_id: &str,
    sweep_file: Option<&str>,
) -> Result<MetricsReport> {
    if records.is_empty() {
        bail!("nothing to evaluate: the evaluation split is empty");
    }
    let refs: Vec<&AnnotatedSentence> = records
        .iter()
        .map(|r| {
            prepared
                .sentences
                .get(r.index)
                .ok_or_else(|| anyhow!("inversion index {} outside the corpus", r.index))
        })
        .collect::<Result<_>>()?;
    let kind = records[0].kind;
    if records.iter().any(|r| r.kind != kind) {
        bail!("inversion dump mixes sequence and set outputs");
    }
    let pred_ids: Vec<Vec<TokenId>> = records.iter().map(|r| content(&r.tokens)).collect();
    let ref_ids: Vec<Vec<TokenId>> = refs.iter().map(|s| content(&s.token_ids)).collect();
    let mode = match kind {
        InversionKind::Sequence => cfg.metrics.mode,
        InversionKind::Set => MatchMode::Set,
    };
    let prf = metrics::micro_prf(&pred_ids, &ref_ids, mode)?;
    let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let owned_refs: Vec<AnnotatedSentence> = refs.iter().map(|s| (*s).clone()).collect();
    let nerr = metrics::nerr(&texts, &owned_refs)?;
    let vocab = &prepared.vocab;
    let pred_words: Vec<Vec<&str>> = pred_ids
        .iter()
        .map(|t| t.iter().map(|&id| vocab.token(id)).collect())
        .collect();
    let ref_words: Vec<Vec<&str>> = refs
        .iter()
        .map(|s| s.words.iter().map(String::as_str).collect())
        .collect();
    let swr_attack = metrics::swr(&pred_words, &prepared.stopwords).context("stop-word ratio of the outputs")?;
    let swr_testset = metrics::swr(&ref_words, &prepared.stopwords)?;
    let mut report = MetricsReport {
        attacker: cfg.attacker.kind.to_string(),
        victim_id: victim_id.to_string(),
        corpus_hash: prepared.corpus_hash.clone(),
        config_hash: cfg.hash(),
        sentences: records.len(),
        entities: refs.iter().map(|s| s.entities.len()).sum(),
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        nerr,
        swr_attack,
        swr_testset,
        swr_diff: metrics::swr_diff(swr_attack, swr_testset),
        threshold: records[0].threshold,
        sweep_csv: sweep_file.map(str::to_string),
        ..Default::default()
    };
    if kind == InversionKind::Sequence {
        let f = cfg.metrics.rouge_f;
        report.rouge1 = Some(metrics::rouge(&pred_ids, &ref_ids, RougeVariant::Rouge1, f)?);
        report.rouge_l = Some(metrics::rouge(&pred_ids, &ref_ids, RougeVariant::RougeL, f)?);
        report.bleu1 = Some(metrics::bleu(&pred_ids, &ref_ids, 1)?);
        report.bleu2 = Some(metrics::bleu(&pred_ids, &ref_ids, 2)?);
        report.bleu4 = Some(metrics::bleu(&pred_ids, &ref_ids, 4)?);
        let normalized: Vec<String> = refs.iter().map(|s| s.normalized_text()).collect();
        let originals: Vec<String> = refs.iter().map(|s| s.text.clone()).collect();
        let eval_victim = make_toy_victim(
            cfg.metrics.eval_victim_kind,
            cfg.metrics.eval_victim_dim,
            cfg.metrics.eval_victim_seed,
            vocab.clone(),
        )?;
        let pairs: Vec<(String, String)> = texts.iter().cloned().zip(normalized.iter().cloned()).collect();
        report.embedding_similarity = match metrics::embedding_similarity(&eval_victim, &pairs) {
            Ok(v) => Some(v),
            Err(embinv_core::Error::Undefined(msg)) => {
                log::warn!("embedding similarity undefined: {msg}");
                None
            }
            Err(e) => return Err(e.into()),
        };
        if cfg.metrics.fluency.enabled {
            let lm = fluency_model(cfg, prepared).context("fluency model")?;
            report.perplexity = match metrics::perplexity(&lm, &pred_ids) {
                Ok(v) => Some(v),
                Err(embinv_core::Error::Undefined(msg)) => {
                    log::warn!("perplexity undefined: {msg}");
                    None
                }
                Err(e) => return Err(e.into()),
            };
        }
        report.emr = Some(metrics::emr(&texts, &originals)?);
        let (mean, median) = metrics::edit_distance(&texts, &normalized)?;
        report.edit_distance_mean = Some(mean);
        report.edit_distance_median = Some(median);
    }
    write_file(&cfg.output_dir.join(REPORT_FILE), report.to_kv())?;
    write_file(
        &cfg.output_dir.join(REPORT_CSV_FILE),
        format!("{}\n{}\n", MetricsReport::csv_header(), report.csv_row()),
    )?;
    Ok(report)
}

/// Runs a stage, naming it in any error.
pub fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("stage `{name}` failed"))
}

/// Full pipeline. Reruns with an unchanged configuration reuse the cached
/// embeddings and the checkpoint and reproduce the report byte for byte.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    stage("config", || write_config(cfg))?;
    let prepared = stage("prepare", || prepare(cfg))?;
    let victim = stage("embed", || build_victim(cfg, &prepared.vocab))?;
    let embeddings = stage("embed", || embed(&prepared, victim.as_ref()))?;
    let id = victim.victim_id().to_string();
    let (attacker, _) = stage("train", || train(cfg, &prepared, &embeddings, &id))?;
    let records = stage("invert", || invert(cfg, &prepared, &embeddings, &attacker))?;
    let sweep_file = match &attacker {
        Attacker::Mlc(m) => {
            stage("sweep", || sweep(cfg, &prepared, &embeddings, m, &id))?;
            Some(SWEEP_FILE)
        }
        _ => None,
    };
    stage("evaluate", || evaluate(cfg, &prepared, &records, &id, sweep_file))
}
