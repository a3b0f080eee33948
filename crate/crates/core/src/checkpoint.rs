//! Attacker checkpoints: a directory holding `manifest.txt` (plain
//! `key = value` lines), `params.bin` and `vocab.txt`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use embinv_autograd::ParamStore;

use crate::corpus::Vocabulary;
use crate::error::{Error, IoContext, Result};
use crate::geia::{GeiaAttacker, GeiaConfig};
use crate::mlc::MlcAttacker;
use crate::msp::{MspAttacker, MspConfig};
use crate::training::Trainable;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackerKind {
    Geia,
    Mlc,
    Msp,
}

impl AttackerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackerKind::Geia => "geia",
            AttackerKind::Mlc => "mlc",
            AttackerKind::Msp => "msp",
        }
    }
}

impl fmt::Display for AttackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geia" => Ok(AttackerKind::Geia),
            "mlc" => Ok(AttackerKind::Mlc),
            "msp" => Ok(AttackerKind::Msp),
            other => Err(Error::InvalidArgument(format!(
                "unknown attacker {other:?} (expected geia, mlc or msp)"
            ))),
        }
    }
}

/// Architecture of any attacker; fields irrelevant to a kind are ignored
/// by it but still recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub kind: AttackerKind,
    pub embedding_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub max_positions: usize,
    pub hidden: usize,
    pub steps: usize,
    pub init_seed: u64,
}

impl Architecture {
    pub fn geia(&self) -> GeiaConfig {
        GeiaConfig {
            embedding_dim: self.embedding_dim,
            width: self.width,
            layers: self.layers,
            heads: self.heads,
            max_positions: self.max_positions,
            seed: self.init_seed,
        }
    }

    pub fn msp(&self) -> MspConfig {
        MspConfig {
            embedding_dim: self.embedding_dim,
            hidden: self.hidden,
            steps: self.steps,
            seed: self.init_seed,
        }
    }
}

/// A trained (or freshly initialized) attacker of any kind.
pub enum Attacker {
    Geia(GeiaAttacker),
    Mlc(MlcAttacker),
    Msp(MspAttacker),
}

impl Attacker {
    pub fn new(arch: &Architecture, vocab: Vocabulary) -> Result<Self> {
        Ok(match arch.kind {
            AttackerKind::Geia => Attacker::Geia(GeiaAttacker::new(arch.geia(), vocab)?),
            AttackerKind::Mlc => Attacker::Mlc(MlcAttacker::new(arch.embedding_dim, vocab, arch.init_seed)?),
            AttackerKind::Msp => Attacker::Msp(MspAttacker::new(arch.msp(), vocab)?),
        })
    }

    fn with_store(arch: &Architecture, vocab: Vocabulary, store: ParamStore) -> Result<Self> {
        Ok(match arch.kind {
            AttackerKind::Geia => Attacker::Geia(GeiaAttacker::from_store(arch.geia(), vocab, store)?),
            AttackerKind::Mlc => Attacker::Mlc(MlcAttacker::from_store(
                arch.embedding_dim,
                vocab,
                arch.init_seed,
                store,
            )?),
            AttackerKind::Msp => Attacker::Msp(MspAttacker::from_store(arch.msp(), vocab, store)?),
        })
    }

    pub fn kind(&self) -> AttackerKind {
        match self {
            Attacker::Geia(_) => AttackerKind::Geia,
            Attacker::Mlc(_) => AttackerKind::Mlc,
            Attacker::Msp(_) => AttackerKind::Msp,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Attacker::Geia(a) => a.vocab(),
            Attacker::Mlc(a) => a.vocab(),
            Attacker::Msp(a) => a.vocab(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Attacker::Geia(a) => a.store(),
            Attacker::Mlc(a) => a.store(),
            Attacker::Msp(a) => a.store(),
        }
    }
}

/// Checkpoint metadata as stored in `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointManifest {
    pub arch: Architecture,
    pub vocab_hash: String,
    pub victim_id: String,
    pub epoch: usize,
    pub dev_loss: f64,
    pub config_hash: String,
}

impl CheckpointManifest {
    pub fn to_text(&self) -> String {
        let a = &self.arch;
        format!(
            "attacker = {}\narch.layers = {}\narch.heads = {}\narch.width = {}\narch.max_positions = {}\n\
             arch.hidden = {}\narch.steps = {}\narch.init_seed = {}\nd_v = {}\nvocab_hash = {}\n\
             victim_id = {}\nepoch = {}\ndev_loss = {}\nconfig_hash = {}\n",
            a.kind,
            a.layers,
            a.heads,
            a.width,
            a.max_positions,
            a.hidden,
            a.steps,
            a.init_seed,
            a.embedding_dim,
            self.vocab_hash,
            self.victim_id,
            self.epoch,
            self.dev_loss,
            self.config_hash,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: MANIFEST_FILE.into(),
            line,
            msg,
        };
        let mut pairs = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(i + 1, format!("expected key = value, got {line:?}")))?;
            if pairs.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(bad(i + 1, format!("duplicate key {}", k.trim())));
            }
        }
        let mut take = |key: &str| pairs.remove(key).ok_or_else(|| bad(0, format!("missing key {key}")));
        fn num<T: FromStr>(key: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Parse {
                path: MANIFEST_FILE.into(),
                line: 0,
                msg: format!("{key}: cannot parse {v:?}"),
            })
        }
        let kind: AttackerKind = take("attacker")?.parse()?;
        let arch = Architecture {
            kind,
            layers: num("arch.layers", take("arch.layers")?)?,
            heads: num("arch.heads", take("arch.heads")?)?,
            width: num("arch.width", take("arch.width")?)?,
            max_positions: num("arch.max_positions", take("arch.max_positions")?)?,
            hidden: num("arch.hidden", take("arch.hidden")?)?,
            steps: num("arch.steps", take("arch.steps")?)?,
            init_seed: num("arch.init_seed", take("arch.init_seed")?)?,
            embedding_dim: num("d_v", take("d_v")?)?,
        };
        let manifest = CheckpointManifest {
            arch,
            vocab_hash: take("vocab_hash")?,
            victim_id: take("victim_id")?,
            epoch: num("epoch", take("epoch")?)?,
            dev_loss: num("dev_loss", take("dev_loss")?)?,
            config_hash: take("config_hash")?,
        };
        if let Some(k) = pairs.keys().next() {
            return Err(bad(0, format!("unknown key {k}")));
        }
        Ok(manifest)
    }
}

/// Writes the attacker's parameters, vocabulary and manifest into `dir`.
pub fn save(dir: &Path, attacker: &Attacker, manifest: &CheckpointManifest) -> Result<()> {
    if manifest.arch.kind != attacker.kind() {
        return Err(Error::Checkpoint(format!(
            "manifest says {} but the attacker is {}",
            manifest.arch.kind,
            attacker.kind()
        )));
    }
    if manifest.vocab_hash != attacker.vocab().hash() {
        return Err(Error::Checkpoint(
            "manifest vocabulary hash does not match the attacker".into(),
        ));
    }
    std::fs::create_dir_all(dir).at(dir)?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).at(path)
    };
    write(PARAMS_FILE, &attacker.store().to_bytes())?;
    write(VOCAB_FILE, attacker.vocab().to_text().as_bytes())?;
    write(MANIFEST_FILE, manifest.to_text().as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    CheckpointManifest::parse(&std::fs::read_to_string(&path).at(path)?)
}

/// Loads a checkpoint, verifying that its vocabulary matches the stored
/// hash and, when given, the expected vocabulary hash and victim.
pub fn load(
    dir: &Path,
    expected_vocab_hash: Option<&str>,
    expected_victim_id: Option<&str>,
) -> Result<(Attacker, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = Vocabulary::parse(&std::fs::read_to_string(&vocab_path).at(&vocab_path)?)?;
    if vocab.hash() != manifest.vocab_hash {
        return Err(Error::Checkpoint(format!(
            "{} does not match the manifest's vocabulary hash",
            vocab_path.display()
        )));
    }
    if let Some(h) = expected_vocab_hash {
        if h != manifest.vocab_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint vocabulary {} differs from the current vocabulary {h}",
                manifest.vocab_hash
            )));
        }
    }
    if let Some(v) = expected_victim_id {
        if v != manifest.victim_id {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained against victim {}, not {v}",
                manifest.victim_id
            )));
        }
    }
    let params_path = dir.join(PARAMS_FILE);
    let store = ParamStore::from_bytes(&std::fs::read(&params_path).at(&params_path)?)?;
    let attacker = Attacker::with_store(&manifest.arch, vocab, store)?;
    Ok((attacker, manifest))
}
