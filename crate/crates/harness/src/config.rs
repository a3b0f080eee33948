//! Experiment configuration: flat `key = value` text with dotted keys.
//!
//! Every key has a default except `corpus.path`, `corpus.stopwords` and
//! `output.dir`. The hash is taken over the fully resolved configuration
//! in sorted key order, so reordering lines or spelling out a default does
//! not change it.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use embinv_core::metrics::MatchMode;
use embinv_core::victim::VictimKind;
use embinv_core::AttackerKind;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub enum VictimSource {
    Toy(VictimKind),
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VictimConfig {
    pub source: VictimSource,
    pub dim: usize,
    pub seed: u64,
    pub url: String,
    pub id: String,
    pub timeout_secs: u64,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackerConfig {
    pub kind: AttackerKind,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub max_positions: usize,
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Gradient-norm clip; 0 disables clipping.
    pub clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMethod {
    Beam,
    Nucleus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    pub beam_size: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Dev,
    Test,
}

impl EvalSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Dev => "dev",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluencyConfig {
    pub enabled: bool,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// Matching mode for sequence outputs; set outputs always use set mode.
    pub mode: MatchMode,
    pub rouge_f: bool,
    pub split: EvalSplit,
    pub eval_victim_kind: VictimKind,
    pub eval_victim_dim: usize,
    pub eval_victim_seed: u64,
    pub sweep_interval: f64,
    pub fluency: FluencyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus_path: PathBuf,
    pub stopwords_path: PathBuf,
    pub ratios: [f64; 3],
    pub max_vocab: usize,
    pub victim: VictimConfig,
    pub attacker: AttackerConfig,
    pub decode: DecodeConfig,
    pub metrics: MetricsConfig,
    pub output_dir: PathBuf,
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key {k}", i + 1);
        }
    }
    Ok(map)
}

/// Applies a `key=value` override.
pub fn apply_override(map: &mut BTreeMap<String, String>, assignment: &str) -> Result<()> {
    let (k, v) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    map.insert(k.trim().to_string(), v.trim().to_string());
    Ok(())
}

struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}")),
        }
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.raw(key).ok_or_else(|| anyhow!("missing required key {key}"))
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => bail!("{key}: expected true or false, got {v:?}"),
    }
}

fn parse_ratios(v: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| anyhow!("corpus.ratios: {e}"))?;
    <[f64; 3]>::try_from(parts).map_err(|_| anyhow!("corpus.ratios needs three comma-separated values"))
}

fn fmt_ratios(r: [f64; 3]) -> String {
    format!("{},{},{}", r[0], r[1], r[2])
}

fn victim_kind_name(kind: VictimKind) -> &'static str {
    match kind {
        VictimKind::BagOfEmbeddings => "bag",
        VictimKind::TinyTransformer => "transformer",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn from_pairs(map: BTreeMap<String, String>) -> Result<Self> {
        let mut r = Reader { map };
        let seed = r.get("seed", 0u64)?;
        let corpus_path = PathBuf::from(r.require("corpus.path")?);
        let stopwords_path = PathBuf::from(r.require("corpus.stopwords")?);
        let ratios = match r.raw("corpus.ratios") {
            Some(v) => parse_ratios(&v)?,
            None => [0.8, 0.1, 0.1],
        };
        let max_vocab = r.get("corpus.max_vocab", 500usize)?;

        let source = match r.raw("victim.kind").as_deref() {
            None => VictimSource::Toy(VictimKind::BagOfEmbeddings),
            Some("remote") => VictimSource::Remote,
            Some(k) => VictimSource::Toy(k.parse().map_err(|e| anyhow!("victim.kind: {e}"))?),
        };
        let dim = r.get("victim.dim", 64usize)?;
        let victim_seed = r.get("victim.seed", 0u64)?;
        let url = r.get("victim.url", String::new())?;
        let id = r.get(
            "victim.id",
            if url.is_empty() {
                String::new()
            } else {
                format!("remote:{url}")
            },
        )?;
        if source == VictimSource::Remote && url.is_empty() {
            bail!("victim.kind = remote requires victim.url");
        }
        let victim = VictimConfig {
            source,
            dim,
            seed: victim_seed,
            url,
            id,
            timeout_secs: r.get("victim.timeout_secs", 30u64)?,
            retries: r.get("victim.retries", 2u32)?,
        };

        let kind: AttackerKind = r
            .get("attacker.type", "geia".to_string())?
            .parse()
            .map_err(|e| anyhow!("attacker.type: {e}"))?;
        let width = r.get("attacker.width", 128usize)?;
        let attacker = AttackerConfig {
            kind,
            layers: r.get("attacker.layers", 4usize)?,
            heads: r.get("attacker.heads", 4usize)?,
            width,
            max_positions: r.get("attacker.max_positions", 64usize)?,
            hidden: r.get("attacker.hidden", width)?,
            steps: r.get("attacker.steps", 10usize)?,
            lr: r.get("attacker.lr", 3e-4)?,
            batch: r.get("attacker.batch", 64usize)?,
            epochs: r.get("attacker.epochs", 10usize)?,
            clip: r.get("attacker.clip", 1.0)?,
        };

        let method = match r.get("decode.method", "beam".to_string())?.as_str() {
            "beam" => DecodeMethod::Beam,
            "nucleus" => DecodeMethod::Nucleus,
            other => bail!("decode.method: expected beam or nucleus, got {other:?}"),
        };
        let decode = DecodeConfig {
            method,
            beam_size: r.get("decode.beam_size", 5usize)?,
            top_p: r.get("decode.top_p", 0.9)?,
            temperature: r.get("decode.temperature", 0.9)?,
            max_len: r.get("decode.max_len", 32usize)?,
            seed: r.get("decode.seed", seed)?,
        };

        let mode = match r.get("metrics.mode", "multiset".to_string())?.as_str() {
            "multiset" => MatchMode::Multiset,
            "set" => MatchMode::Set,
            other => bail!("metrics.mode: expected multiset or set, got {other:?}"),
        };
        let rouge_f = match r.get("metrics.rouge", "recall".to_string())?.as_str() {
            "recall" => false,
            "f" => true,
            other => bail!("metrics.rouge: expected recall or f, got {other:?}"),
        };
        let split = match r.get("metrics.split", "test".to_string())?.as_str() {
            "train" => EvalSplit::Train,
            "dev" => EvalSplit::Dev,
            "test" => EvalSplit::Test,
            other => bail!("metrics.split: expected train, dev or test, got {other:?}"),
        };
        let default_eval_kind = match victim.source {
            VictimSource::Toy(k) => k,
            VictimSource::Remote => VictimKind::BagOfEmbeddings,
        };
        let eval_victim_kind = match r.raw("metrics.eval_victim.kind") {
            Some(v) => v.parse().map_err(|e| anyhow!("metrics.eval_victim.kind: {e}"))?,
            None => default_eval_kind,
        };
        let fluency_enabled = match r.raw("metrics.fluency.enabled") {
            Some(v) => parse_bool("metrics.fluency.enabled", &v)?,
            None => true,
        };
        let metrics = MetricsConfig {
            mode,
            rouge_f,
            split,
            eval_victim_kind,
            eval_victim_dim: r.get("metrics.eval_victim.dim", victim.dim.max(2))?,
            eval_victim_seed: r.get("metrics.eval_victim.seed", victim.seed.wrapping_add(1))?,
            sweep_interval: r.get("metrics.sweep_interval", 0.05)?,
            fluency: FluencyConfig {
                enabled: fluency_enabled,
                width: r.get("metrics.fluency.width", 64usize)?,
                layers: r.get("metrics.fluency.layers", 2usize)?,
                heads: r.get("metrics.fluency.heads", 4usize)?,
                epochs: r.get("metrics.fluency.epochs", 5usize)?,
                lr: r.get("metrics.fluency.lr", 1e-3)?,
                batch: r.get("metrics.fluency.batch", 32usize)?,
            },
        };
        let output_dir = PathBuf::from(r.require("output.dir")?);
        if let Some(k) = r.map.keys().next() {
            bail!("unknown configuration key {k}");
        }
        let config = ExperimentConfig {
            seed,
            corpus_path,
            stopwords_path,
            ratios,
            max_vocab,
            victim,
            attacker,
            decode,
            metrics,
            output_dir,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let a = &self.attacker;
        if !(a.lr >= 0.0 && a.lr.is_finite()) || a.clip < 0.0 || a.batch == 0 {
            bail!("attacker.lr/clip must be non-negative and attacker.batch positive");
        }
        if self.decode.beam_size == 0 || self.decode.max_len == 0 {
            bail!("decode.beam_size and decode.max_len must be positive");
        }
        if self.victim.dim < 2 {
            bail!("victim.dim must be at least 2");
        }
        Ok(())
    }

    /// Fully resolved configuration, one `key = value` per line, sorted.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let a = &self.attacker;
        let d = &self.decode;
        let x = &self.metrics;
        let f = &x.fluency;
        m.insert("seed", self.seed.to_string());
        m.insert("corpus.path", self.corpus_path.display().to_string());
        m.insert("corpus.stopwords", self.stopwords_path.display().to_string());
        m.insert("corpus.ratios", fmt_ratios(self.ratios));
        m.insert("corpus.max_vocab", self.max_vocab.to_string());
        m.insert(
            "victim.kind",
            match self.victim.source {
                VictimSource::Toy(k) => victim_kind_name(k).to_string(),
                VictimSource::Remote => "remote".to_string(),
            },
        );
        m.insert("victim.dim", self.victim.dim.to_string());
        m.insert("victim.seed", self.victim.seed.to_string());
        m.insert("victim.url", self.victim.url.clone());
        m.insert("victim.id", self.victim.id.clone());
        m.insert("victim.timeout_secs", self.victim.timeout_secs.to_string());
        m.insert("victim.retries", self.victim.retries.to_string());
        m.insert("attacker.type", a.kind.to_string());
        m.insert("attacker.layers", a.layers.to_string());
        m.insert("attacker.heads", a.heads.to_string());
        m.insert("attacker.width", a.width.to_string());
        m.insert("attacker.max_positions", a.max_positions.to_string());
        m.insert("attacker.hidden", a.hidden.to_string());
        m.insert("attacker.steps", a.steps.to_string());
        m.insert("attacker.lr", a.lr.to_string());
        m.insert("attacker.batch", a.batch.to_string());
        m.insert("attacker.epochs", a.epochs.to_string());
        m.insert("attacker.clip", a.clip.to_string());
        m.insert(
            "decode.method",
            match d.method {
                DecodeMethod::Beam => "beam",
                DecodeMethod::Nucleus => "nucleus",
            }
            .into(),
        );
        m.insert("decode.beam_size", d.beam_size.to_string());
        m.insert("decode.top_p", d.top_p.to_string());
        m.insert("decode.temperature", d.temperature.to_string());
        m.insert("decode.max_len", d.max_len.to_string());
        m.insert("decode.seed", d.seed.to_string());
        m.insert(
            "metrics.mode",
            match x.mode {
                MatchMode::Multiset => "multiset",
                MatchMode::Set => "set",
            }
            .into(),
        );
        m.insert("metrics.rouge", if x.rouge_f { "f" } else { "recall" }.into());
        m.insert("metrics.split", x.split.as_str().into());
        m.insert("metrics.eval_victim.kind", victim_kind_name(x.eval_victim_kind).into());
        m.insert("metrics.eval_victim.dim", x.eval_victim_dim.to_string());
        m.insert("metrics.eval_victim.seed", x.eval_victim_seed.to_string());
        m.insert("metrics.sweep_interval", x.sweep_interval.to_string());
        m.insert("metrics.fluency.enabled", f.enabled.to_string());
        m.insert("metrics.fluency.width", f.width.to_string());
        m.insert("metrics.fluency.layers", f.layers.to_string());
        m.insert("metrics.fluency.heads", f.heads.to_string());
        m.insert("metrics.fluency.epochs", f.epochs.to_string());
        m.insert("metrics.fluency.lr", f.lr.to_string());
        m.insert("metrics.fluency.batch", f.batch.to_string());
        m.insert("output.dir", self.output_dir.display().to_string());
        m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex sha256 of [`ExperimentConfig::canonical`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Hash of the settings that determine the trained attacker.
    pub fn training_hash(&self) -> String {
        let relevant: String = self
            .canonical()
            .lines()
            .filter(|l| {
                ["seed", "corpus.", "victim.", "attacker."]
                    .iter()
                    .any(|p| l.starts_with(p))
            })
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(relevant.as_bytes()))
    }
}

/// Loads a config file and applies `key=value` overrides in order.
pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut map = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_pairs(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BTreeMap::new(),
    };
    for o in overrides {
        apply_override(&mut map, o)?;
    }
    ExperimentConfig::from_pairs(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "corpus.path = c.jsonl\ncorpus.stopwords = s.txt\noutput.dir = out\n";

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.attacker.lr, 3e-4);
        assert_eq!(c.attacker.batch, 64);
        assert_eq!(c.attacker.epochs, 10);
        assert_eq!(c.decode.method, DecodeMethod::Beam);
        assert_eq!(c.decode.beam_size, 5);
        assert_eq!(c.decode.top_p, 0.9);
        assert_eq!(c.decode.temperature, 0.9);
        assert_eq!(c.metrics.sweep_interval, 0.05);
        assert_eq!(c.attacker.hidden, c.attacker.width);
        assert_eq!((c.attacker.layers, c.attacker.heads, c.attacker.width), (4, 4, 128));
    }

    #[test]
    fn hash_ignores_order_and_explicit_defaults() {
        let a = ExperimentConfig::parse(BASE).unwrap();
        let reordered: String = BASE.lines().rev().map(|l| format!("{l}\n")).collect();
        let b = ExperimentConfig::parse(&reordered).unwrap();
        let c = ExperimentConfig::parse(&format!("{BASE}attacker.lr = 0.0003\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash(), c.hash());
        let d = ExperimentConfig::parse(&format!("{BASE}attacker.lr = 0.001\n")).unwrap();
        assert_ne!(a.hash(), d.hash());
        assert_ne!(a.training_hash(), d.training_hash());
        let e = ExperimentConfig::parse(&format!("{BASE}decode.beam_size = 3\n")).unwrap();
        assert_eq!(a.training_hash(), e.training_hash());
    }

    #[test]
    fn canonical_text_parses_back() {
        let a = ExperimentConfig::parse(&format!("{BASE}victim.kind = transformer\nattacker.type = msp\n")).unwrap();
        let b = ExperimentConfig::parse(&a.canonical()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("corpus.path = x\n").is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}bogus = 1\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}attacker.type = lstm\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}victim.kind = remote\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}seed = 1\nseed = 2\n")).is_err());
        assert!(ExperimentConfig::parse("no equals sign\n").is_err());
    }

    #[test]
    fn overrides_replace_values() {
        let mut m = parse_pairs(BASE).unwrap();
        apply_override(&mut m, "attacker.type=mlc").unwrap();
        let c = ExperimentConfig::from_pairs(m).unwrap();
        assert_eq!(c.attacker.kind, AttackerKind::Mlc);
    }

    proptest::proptest! {
        #[test]
        fn hash_is_stable_under_line_order(
            seed in 0u64..1000,
            lr in 1e-5f64..1e-1,
            epochs in 1usize..50,
            beam in 1usize..8,
            kind in proptest::sample::select(vec!["geia", "mlc", "msp"]),
            rotate in 0usize..8,
        ) {
            let mut lines: Vec<String> = BASE.lines().map(str::to_string).collect();
            lines.push(format!("seed = {seed}"));
            lines.push(format!("attacker.lr = {lr}"));
            lines.push(format!("attacker.epochs = {epochs}"));
            lines.push(format!("decode.beam_size = {beam}"));
            lines.push(format!("attacker.type = {kind}"));
            let a = ExperimentConfig::parse(&lines.join("\n")).unwrap();
            let n = lines.len();
            lines.rotate_left(rotate % n);
            let b = ExperimentConfig::parse(&lines.join("\n")).unwrap();
            proptest::prop_assert_eq!(a.hash(), b.hash());
            let c = ExperimentConfig::parse(&a.canonical()).unwrap();
            proptest::prop_assert_eq!(&c, &a);
            proptest::prop_assert_eq!(c.hash(), a.hash());
        }
    }
}
