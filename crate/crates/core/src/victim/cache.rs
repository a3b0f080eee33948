use std::io::Write;
use std::path::{Path, PathBuf};

use super::{embed_all, SentenceEmbedding, Victim};
use crate::corpus::{corpus_hash, AnnotatedSentence};
use crate::error::{Error, IoContext, Result};

const FORMAT: &str = "f32le";
const QUERY_CHUNK: usize = 64;

/// Sidecar describing an embedding cache file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheManifest {
    pub victim_id: String,
    pub dim: usize,
    pub corpus_hash: String,
    pub count: usize,
}

impl CacheManifest {
    pub fn to_text(&self) -> String {
        format!(
            "format={FORMAT}\nvictim_id={}\nd_v={}\ncorpus_hash={}\ncount={}\n",
            self.victim_id, self.dim, self.corpus_hash, self.count
        )
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut victim_id = None;
        let mut dim = None;
        let mut hash = None;
        let mut count = None;
        let mut format = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| format!("line {}: {e}", i + 1));
            match k {
                "format" => format = Some(v.to_string()),
                "victim_id" => victim_id = Some(v.to_string()),
                "d_v" => dim = Some(num(v)?),
                "corpus_hash" => hash = Some(v.to_string()),
                "count" => count = Some(num(v)?),
                other => return Err(format!("line {}: unknown key {other:?}", i + 1)),
            }
        }
        if format.as_deref() != Some(FORMAT) {
            return Err(format!("unsupported format {format:?}"));
        }
        Ok(CacheManifest {
            victim_id: victim_id.ok_or("missing victim_id")?,
            dim: dim.ok_or("missing d_v")?,
            corpus_hash: hash.ok_or("missing corpus_hash")?,
            count: count.ok_or("missing count")?,
        })
    }
}

fn manifest_path(cache_path: &Path) -> PathBuf {
    let mut s = cache_path.as_os_str().to_os_string();
    s.push(".manifest");
    PathBuf::from(s)
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).at(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).at(dir)?;
    tmp.write_all(bytes).at(path)?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Embeds `sentences` through `victim`, persisting the vectors at
/// `cache_path` (row-major little-endian f32) with a `.manifest` sidecar.
/// A cache whose manifest matches the victim and corpus is returned without
/// querying the victim; a mismatching one is a [`Error::StaleCache`].
pub fn embed_corpus_cached(
    victim: &dyn Victim,
    sentences: &[AnnotatedSentence],
    cache_path: &Path,
) -> Result<Vec<SentenceEmbedding>> {
    let expected = CacheManifest {
        victim_id: victim.victim_id().to_string(),
        dim: victim.dim(),
        corpus_hash: corpus_hash(sentences),
        count: sentences.len(),
    };
    let mpath = manifest_path(cache_path);
    if mpath.exists() {
        let text = std::fs::read_to_string(&mpath).at(&mpath)?;
        let stale = |reason: String| Error::StaleCache {
            path: cache_path.to_path_buf(),
            reason,
        };
        let found = CacheManifest::parse(&text).map_err(stale)?;
        if found.victim_id != expected.victim_id {
            return Err(stale(format!(
                "built for victim {}, not {}",
                found.victim_id, expected.victim_id
            )));
        }
        if found != expected {
            return Err(stale("corpus content changed".into()));
        }
        let bytes = std::fs::read(cache_path).at(cache_path)?;
        if bytes.len() != found.count * found.dim * 4 {
            return Err(stale(format!("data file holds {} bytes", bytes.len())));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        return floats
            .chunks(found.dim.max(1))
            .take(found.count)
            .map(|row| SentenceEmbedding::new(row.to_vec(), found.victim_id.clone()))
            .collect();
    }
    let embeddings = embed_all(victim, sentences, QUERY_CHUNK)?;
    let mut bytes = Vec::with_capacity(sentences.len() * victim.dim() * 4);
    for e in &embeddings {
        for v in &e.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomically(cache_path, &bytes)?;
    write_atomically(&mpath, expected.to_text().as_bytes())?;
    Ok(embeddings)
}
