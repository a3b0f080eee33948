//! Corpus ingestion: line-delimited JSON records, whitespace tokenization,
//! a frequency-capped vocabulary shared by every attacker, and seeded
//! train/dev/test splitting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub type TokenId = u32;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

/// One text of the auxiliary / evaluation data.
///
/// `words` are the lowercased whitespace tokens of `text`; `token_ids` are
/// filled in by [`index_corpus`] once a vocabulary exists.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub text: String,
    pub words: Vec<String>,
    pub token_ids: Vec<TokenId>,
    pub entities: BTreeSet<String>,
    pub stopword_mask: Vec<bool>,
    pub context: Option<String>,
}

impl AnnotatedSentence {
    /// Sentence length `u` in tokens.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Lowercased, single-space-joined form used by the text metrics.
    pub fn normalized_text(&self) -> String {
        self.words.join(" ")
    }
}

/// Raw corpus record as it appears on one line of a corpus file.
#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct CorpusRecord {
    pub text: String,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub context: Option<String>,
}

/// Lowercase stop-word lexicon.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn parse(text: &str) -> Self {
        StopWords(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path).at(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for StopWords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        StopWords(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

/// Lowercased whitespace tokens.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses one corpus line into a record, validating the fields.
pub fn parse_record(line: &str) -> std::result::Result<CorpusRecord, String> {
    let record: CorpusRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if words(&record.text).is_empty() {
        return Err("text has no tokens".into());
    }
    let lowered = record.text.to_lowercase();
    for entity in &record.entities {
        if entity.trim().is_empty() {
            return Err("empty entity".into());
        }
        if !lowered.contains(&entity.to_lowercase()) {
            return Err(format!("entity {entity:?} does not occur in text"));
        }
    }
    Ok(record)
}

pub fn annotate(record: CorpusRecord, stopwords: &StopWords) -> AnnotatedSentence {
    let words = words(&record.text);
    let stopword_mask = words.iter().map(|w| stopwords.contains(w)).collect();
    AnnotatedSentence {
        text: record.text,
        words,
        token_ids: Vec::new(),
        entities: record.entities.into_iter().collect(),
        stopword_mask,
        context: record.context,
    }
}

/// Parses the contents of a corpus file. `origin` only labels errors.
pub fn parse_corpus(contents: &str, stopwords: &StopWords, origin: &Path) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(line).map_err(|msg| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        out.push(annotate(record, stopwords));
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus(origin.to_path_buf()));
    }
    Ok(out)
}

/// Loads a line-delimited corpus file, one sentence per record in file order.
pub fn load_corpus(path: &Path, stopword_path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let stopwords = StopWords::load(stopword_path)?;
    let contents = std::fs::read_to_string(path).at(path)?;
    parse_corpus(&contents, &stopwords, path)
}

/// Content hash over the sentence texts, in order.
pub fn corpus_hash(sentences: &[AnnotatedSentence]) -> String {
    let mut h = Sha256::new();
    for s in sentences {
        h.update(s.text.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Token list with contiguous ids; ids 0..3 are `<pad>`, `<unk>`, `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const PAD_ID: TokenId = 0;
    pub const UNK_ID: TokenId = 1;
    pub const EOS_ID: TokenId = 2;
    pub const NUM_SPECIAL: usize = 3;

    /// Most frequent words first (ties lexicographic), capped so the total
    /// including specials is at most `max_size`.
    pub fn build(corpus: &[AnnotatedSentence], max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        if max_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size {max_size} leaves no room for content tokens"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in corpus {
            for w in &s.words {
                if !is_special_str(w) {
                    *counts.entry(w.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size - Self::NUM_SPECIAL);
        let tokens = [PAD, UNK, EOS]
            .into_iter()
            .chain(ranked.into_iter().map(|(w, _)| w))
            .map(String::from)
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its token list (id order).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < Self::NUM_SPECIAL || tokens[..3] != [PAD, UNK, EOS] {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <pad>, <unk>, <eos>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid token {t:?}")));
            }
            if i >= Self::NUM_SPECIAL && is_special_str(t) {
                return Err(Error::InvalidArgument(format!("special {t} repeated")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// One token per line, in id order.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(String::from).collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < Self::NUM_SPECIAL
    }

    /// Ids of every non-special token.
    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> {
        Self::NUM_SPECIAL as TokenId..self.tokens.len() as TokenId
    }

    /// Maps lowercased whitespace tokens to ids; unknown words become `<unk>`.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let ids = self.ids_for(&words(text));
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(ids)
    }

    pub fn ids_for(&self, words: &[String]) -> Vec<TokenId> {
        words
            .iter()
            .map(|w| match self.index.get(w.as_str()) {
                Some(&id) if !Self::is_special(id) => id,
                _ => Self::UNK_ID,
            })
            .collect()
    }

    /// Space-joined tokens, skipping `<pad>` and `<eos>`.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != Self::PAD_ID && id != Self::EOS_ID)
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn is_special_str(w: &str) -> bool {
    w == PAD || w == UNK || w == EOS
}

pub fn build_vocabulary(corpus: &[AnnotatedSentence], max_size: usize) -> Result<Vocabulary> {
    Vocabulary::build(corpus, max_size)
}

pub fn tokenize(vocab: &Vocabulary, text: &str) -> Result<Vec<TokenId>> {
    vocab.tokenize(text)
}

/// Assigns `token_ids` for every sentence under `vocab`.
pub fn index_corpus(sentences: &mut [AnnotatedSentence], vocab: &Vocabulary) {
    for s in sentences {
        s.token_ids = vocab.ids_for(&s.words);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Partition sizes by largest remainder: each within one of `ratio * n`,
/// summing to `n`.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = n.saturating_sub(sizes.iter().sum());
    for &i in order.iter().cycle().take(missing) {
        sizes[i] += 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

/// Train/dev/test positions of an `n`-item corpus: a seeded shuffle cut
/// into contiguous parts of [`split_sizes`].
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative"
        )));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must sum to 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_dev, _] = split_sizes(n, ratios);
    let test = order.split_off(n_train + n_dev);
    let dev = order.split_off(n_train);
    Ok([order, dev, test])
}

/// Seeded shuffle, then contiguous train/dev/test partition.
pub fn split_corpus(corpus: &[AnnotatedSentence], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit> {
    let [train, dev, test] = split_indices(corpus.len(), ratios, seed)?;
    let take = |idx: Vec<usize>| -> Vec<AnnotatedSentence> { idx.into_iter().map(|i| corpus[i].clone()).collect() };
    Ok(CorpusSplit {
        train: take(train),
        dev: take(dev),
        test: take(test),
        seed,
        ratios,
    })
}
