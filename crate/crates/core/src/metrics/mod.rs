//! Evaluation battery: token-level classification scores, informativeness
//! (entity recovery, stop-word ratio) and generation quality (BLEU, ROUGE,
//! embedding similarity, perplexity, exact match, edit distance).
//!
//! Token-level functions are generic over the token type so they work on
//! vocabulary ids and on normalized word strings alike.

mod report;

pub use report::MetricsReport;

use std::collections::HashMap;
use std::hash::Hash;

use crate::corpus::{words, AnnotatedSentence, StopWords, TokenId};
use crate::error::{Error, Result};
use crate::geia::GeiaAttacker;
use crate::victim::Victim;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Distinct tokens only.
    Set,
    /// Repeated tokens count, intersections are clipped.
    Multiset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Prf {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn counts<T: Hash + Eq>(xs: &[T]) -> HashMap<&T, usize> {
    let mut m = HashMap::new();
    for x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// `(|pred ∩ ref|, |pred|, |ref|)` under `mode`.
fn overlap<T: Hash + Eq>(pred: &[T], reference: &[T], mode: MatchMode) -> (usize, usize, usize) {
    let (p, r) = (counts(pred), counts(reference));
    match mode {
        MatchMode::Multiset => {
            let hit = p.iter().map(|(t, &c)| c.min(r.get(t).copied().unwrap_or(0))).sum();
            (hit, pred.len(), reference.len())
        }
        MatchMode::Set => {
            let hit = p.keys().filter(|t| r.contains_key(*t)).count();
            (hit, p.len(), r.len())
        }
    }
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(format!("{a} {what} for {b} references")));
    }
    Ok(())
}

/// Corpus-level micro precision, recall and F1.
pub fn micro_prf<T: Hash + Eq>(predictions: &[Vec<T>], references: &[Vec<T>], mode: MatchMode) -> Result<Prf> {
    check_lengths(predictions.len(), references.len(), "predictions")?;
    let (mut hit, mut np, mut nr) = (0, 0, 0);
    for (p, r) in predictions.iter().zip(references) {
        let (h, a, b) = overlap(p, r, mode);
        hit += h;
        np += a;
        nr += b;
    }
    if nr == 0 {
        return Err(Error::Undefined("references contain no tokens".into()));
    }
    let precision = if np == 0 { 0.0 } else { hit as f64 / np as f64 };
    Ok(Prf::new(precision, hit as f64 / nr as f64))
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Fraction of reference entities that appear, case-insensitively and as a
/// contiguous run of whitespace tokens, in the generated text. `None` when
/// the references carry no entities at all.
pub fn nerr(generated: &[String], references: &[AnnotatedSentence]) -> Result<Option<f64>> {
    check_lengths(generated.len(), references.len(), "outputs")?;
    let (mut found, mut total) = (0usize, 0usize);
    for (g, r) in generated.iter().zip(references) {
        let out = words(g);
        for e in &r.entities {
            total += 1;
            if contains_run(&out, &words(e)) {
                found += 1;
            }
        }
    }
    Ok((total > 0).then(|| found as f64 / total as f64))
}

/// Stop-word tokens over all tokens.
pub fn swr<S: AsRef<str>>(token_lists: &[Vec<S>], stopwords: &StopWords) -> Result<f64> {
    let total: usize = token_lists.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Undefined("stop-word ratio of zero tokens".into()));
    }
    let stop = token_lists
        .iter()
        .flatten()
        .filter(|t| stopwords.contains(t.as_ref()))
        .count();
    Ok(stop as f64 / total as f64)
}

pub fn swr_diff(attack: f64, testset: f64) -> f64 {
    attack - testset
}

fn ngram_counts<T: Hash + Eq>(xs: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if xs.len() >= n {
        for w in xs.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// `(clipped matches, candidate n-grams)` for order `n`.
pub fn clipped_ngram_matches<T: Hash + Eq>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let hit = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (hit, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU with uniform weights over orders `1..=n`. A zero match
/// count at orders ≥ 2 is replaced by one match.
pub fn sentence_bleu<T: Hash + Eq>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    if candidate.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (hit, total) = clipped_ngram_matches(candidate, reference, k);
        let p = if k >= 2 && hit == 0 {
            1.0 / total.max(1) as f64
        } else {
            hit as f64 / total as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / n as f64).exp()
}

/// Mean sentence BLEU-`n`.
pub fn bleu<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    check_lengths(candidates.len(), references.len(), "candidates")?;
    mean(candidates.iter().zip(references).map(|(c, r)| sentence_bleu(c, r, n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    Rouge1,
    RougeL,
}

/// Longest common subsequence length.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE as recall, or as F1 when `f_measure` is set.
pub fn sentence_rouge<T: Hash + Eq>(
    candidate: &[T],
    reference: &[T],
    variant: RougeVariant,
    f_measure: bool,
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Undefined("ROUGE against an empty reference".into()));
    }
    let hit = match variant {
        RougeVariant::Rouge1 => clipped_ngram_matches(candidate, reference, 1).0,
        RougeVariant::RougeL => lcs_len(candidate, reference),
    };
    let recall = hit as f64 / reference.len() as f64;
    if !f_measure {
        return Ok(recall);
    }
    let precision = if candidate.is_empty() {
        0.0
    } else {
        hit as f64 / candidate.len() as f64
    };
    Ok(harmonic_mean(precision, recall))
}

/// Mean sentence ROUGE.
pub fn rouge<T: Hash + Eq>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    variant: RougeVariant,
    f_measure: bool,
) -> Result<f64> {
    check_lengths(candidates.len(), references.len(), "candidates")?;
    let scores = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| sentence_rouge(c, r, variant, f_measure))
        .collect::<Result<Vec<_>>>()?;
    mean(scores.into_iter())
}

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(u: &[f32], v: &[f32]) -> Option<f64> {
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    let nu: f64 = u.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    (nu > 0.0 && nv > 0.0).then(|| (dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Mean cosine between evaluation-embedder vectors of generated and
/// reference texts. Pairs with a zero vector are skipped.
pub fn embedding_similarity(embedder: &dyn Victim, pairs: &[(String, String)]) -> Result<f64> {
    let mut sims = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(64) {
        let texts: Vec<&str> = chunk.iter().flat_map(|(g, r)| [g.as_str(), r.as_str()]).collect();
        let emb = embedder.embed_texts(&texts)?;
        if emb.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                emb.len()
            )));
        }
        for (i, pair) in emb.chunks(2).enumerate() {
            match cosine(&pair[0].values, &pair[1].values) {
                Some(c) => sims.push(c),
                None => log::warn!("skipping zero-norm pair {:?}", chunk[i].0),
            }
        }
    }
    if sims.is_empty() {
        return Err(Error::Undefined("every embedding pair had a zero vector".into()));
    }
    mean(sims.into_iter())
}

/// `exp` of the pooled per-token cross-entropy (`<eos>` included) of an
/// unconditional decoder; empty sentences are skipped.
pub fn perplexity(fluency_lm: &GeiaAttacker, sentences: &[Vec<TokenId>]) -> Result<f64> {
    let zero = vec![0.0f32; fluency_lm.config().embedding_dim];
    let cap = fluency_lm.config().max_positions - 1;
    let (mut nll, mut n) = (0.0, 0usize);
    for s in sentences.iter().filter(|s| !s.is_empty()) {
        let s = &s[..s.len().min(cap)];
        let (l, k) = fluency_lm.sequence_nll(&zero, s)?;
        nll += l;
        n += k;
    }
    if n == 0 {
        return Err(Error::Undefined("perplexity of zero sentences".into()));
    }
    Ok((nll / n as f64).exp().max(1.0))
}

/// Lowercased, ASCII-punctuation-free, whitespace-normalized form.
pub fn normalize_for_match(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fraction of exact matches after [`normalize_for_match`].
pub fn emr(generated: &[String], references: &[String]) -> Result<f64> {
    check_lengths(generated.len(), references.len(), "outputs")?;
    mean(
        generated
            .iter()
            .zip(references)
            .map(|(g, r)| f64::from(u8::from(normalize_for_match(g) == normalize_for_match(r)))),
    )
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let next = (diag + usize::from(ca != cb)).min(row[j] + 1).min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Mean and median character edit distance over pairs.
pub fn edit_distance(generated: &[String], references: &[String]) -> Result<(f64, f64)> {
    check_lengths(generated.len(), references.len(), "outputs")?;
    let mut d: Vec<usize> = generated
        .iter()
        .zip(references)
        .map(|(g, r)| levenshtein(g, r))
        .collect();
    if d.is_empty() {
        return Err(Error::Undefined("edit distance of zero pairs".into()));
    }
    d.sort_unstable();
    let m = d.len() / 2;
    let median = if d.len() % 2 == 1 {
        d[m] as f64
    } else {
        (d[m - 1] + d[m]) as f64 / 2.0
    };
    Ok((d.iter().sum::<usize>() as f64 / d.len() as f64, median))
}

fn mean(xs: impl Iterator<Item = f64>) -> Result<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Undefined("mean of an empty corpus".into()));
    }
    Ok(s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{annotate, CorpusRecord};

    fn toks(s: &str) -> Vec<String> {
        words(s)
    }

    fn sentence(text: &str, entities: &[&str]) -> AnnotatedSentence {
        annotate(
            CorpusRecord {
                text: text.into(),
                entities: entities.iter().map(|e| e.to_string()).collect(),
                context: None,
            },
            &StopWords::default(),
        )
    }

    #[test]
    fn set_prf_hand_example() {
        let p = micro_prf(&[toks("a b d")], &[toks("a b c")], MatchMode::Set).unwrap();
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn prf_identity_disjoint_and_degenerate() {
        let same = micro_prf(&[toks("x y y")], &[toks("x y y")], MatchMode::Multiset).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let none = micro_prf(&[toks("p q")], &[toks("x y")], MatchMode::Set).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        let empty = micro_prf(&[vec![]], &[toks("x")], MatchMode::Set).unwrap();
        assert_eq!(empty.precision, 0.0);
        assert!(micro_prf(&[toks("x")], &[vec![]], MatchMode::Set).is_err());
    }

    #[test]
    fn multiset_clips_repeats() {
        let p = micro_prf(&[toks("the the the")], &[toks("the cat")], MatchMode::Multiset).unwrap();
        assert!((p.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.recall - 0.5).abs() < 1e-12);
        let s = micro_prf(&[toks("the the the")], &[toks("the cat")], MatchMode::Set).unwrap();
        assert_eq!(s.precision, 1.0);
    }

    #[test]
    fn nerr_examples() {
        let refs = [sentence("alice met bob", &["alice", "bob"])];
        assert_eq!(nerr(&["ALICE went home".into()], &refs).unwrap(), Some(0.5));
        assert_eq!(nerr(&["alice met bob".into()], &refs).unwrap(), Some(1.0));
        assert_eq!(nerr(&["".into()], &refs).unwrap(), Some(0.0));
        let plain = [sentence("nobody here", &[])];
        assert_eq!(nerr(&["nobody".into()], &plain).unwrap(), None);
        let multi = [sentence("i live in New York", &["new york"])];
        assert_eq!(nerr(&["york new".into()], &multi).unwrap(), Some(0.0));
        assert_eq!(nerr(&["in new york".into()], &multi).unwrap(), Some(1.0));
    }

    #[test]
    fn swr_examples() {
        let sw: StopWords = ["i", "am", "a"].into_iter().collect();
        assert_eq!(swr(&[toks("i am a cat")], &sw).unwrap(), 0.75);
        assert_eq!(swr(&[toks("i am a cat")], &StopWords::default()).unwrap(), 0.0);
        assert!(swr::<String>(&[vec![]], &sw).is_err());
        assert!((swr_diff(0.55, 0.61) + 0.06).abs() < 1e-12);
    }

    #[test]
    fn bleu_examples() {
        let r = toks("the cat sat on the mat");
        for n in [1, 2, 4] {
            assert!((sentence_bleu(&r, &r, n) - 1.0).abs() < 1e-12);
        }
        assert_eq!(clipped_ngram_matches(&toks("the the the"), &toks("the cat"), 1), (1, 3));
        assert!((sentence_bleu(&toks("the the the"), &toks("the cat"), 1) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(sentence_bleu(&toks("x y z"), &r, 1), 0.0);
        assert_eq!(sentence_bleu(&toks("x y z"), &r, 4), 0.0);
        assert_eq!(sentence_bleu::<String>(&[], &r, 2), 0.0);
        // Short candidate pays the brevity penalty.
        let short = sentence_bleu(&toks("the cat"), &r, 1);
        assert!((short - (1.0f64 - 3.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        let r1 = sentence_rouge(&toks("the cat"), &toks("the cat sat"), RougeVariant::Rouge1, false).unwrap();
        assert!((r1 - 2.0 / 3.0).abs() < 1e-12);
        let rl = sentence_rouge(&toks("a c"), &toks("a b c"), RougeVariant::RougeL, false).unwrap();
        assert!((rl - 2.0 / 3.0).abs() < 1e-12);
        for v in [RougeVariant::Rouge1, RougeVariant::RougeL] {
            assert_eq!(sentence_rouge(&toks("a b"), &toks("a b"), v, false).unwrap(), 1.0);
            assert_eq!(sentence_rouge(&toks("a b"), &toks("a b"), v, true).unwrap(), 1.0);
        }
        let f = sentence_rouge(&toks("a c"), &toks("a b c"), RougeVariant::RougeL, true).unwrap();
        assert!((f - 0.8).abs() < 1e-12);
        assert!(sentence_rouge(&toks("a"), &[], RougeVariant::Rouge1, false).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), Some(0.0));
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-7);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), None);
    }

    #[test]
    fn emr_examples() {
        let m = |a: &str, b: &str| emr(&[a.into()], &[b.into()]).unwrap();
        assert_eq!(m("hi there .", "hi there"), 1.0);
        assert_eq!(m("Hi,  There!", "hi there"), 1.0);
        assert_eq!(m("a b", "b a"), 0.0);
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("same", "same"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        let (mean, median) = edit_distance(
            &["kitten".into(), "a".into(), "".into()],
            &["sitting".into(), "a".into(), "xy".into()],
        )
        .unwrap();
        assert!((mean - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(median, 2.0);
    }
}
