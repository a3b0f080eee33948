use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Everything measured for one experiment. Generation metrics are `None`
/// for attackers that output token sets; `nerr` is `None` when the
/// evaluation split has no entities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub attacker: String,
    pub victim_id: String,
    pub corpus_hash: String,
    pub config_hash: String,
    /// Evaluated sentences.
    pub sentences: usize,
    /// Reference entities considered by NERR.
    pub entities: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nerr: Option<f64>,
    pub swr_attack: f64,
    pub swr_testset: f64,
    pub swr_diff: f64,
    pub rouge1: Option<f64>,
    pub rouge_l: Option<f64>,
    pub bleu1: Option<f64>,
    pub bleu2: Option<f64>,
    pub bleu4: Option<f64>,
    pub embedding_similarity: Option<f64>,
    pub perplexity: Option<f64>,
    pub emr: Option<f64>,
    pub edit_distance_mean: Option<f64>,
    pub edit_distance_median: Option<f64>,
    /// Decision threshold chosen on dev (classification attacker only).
    pub threshold: Option<f64>,
    /// Threshold sweep file written next to the report.
    pub sweep_csv: Option<String>,
}

enum Field<'a> {
    Text(&'a mut String),
    Count(&'a mut usize),
    Real(&'a mut f64),
    OptReal(&'a mut Option<f64>),
    OptText(&'a mut Option<String>),
}

const NONE: &str = "none";

impl MetricsReport {
    fn fields(&mut self) -> Vec<(&'static str, Field<'_>)> {
        use Field::*;
        vec![
            ("attacker", Text(&mut self.attacker)),
            ("victim_id", Text(&mut self.victim_id)),
            ("corpus_hash", Text(&mut self.corpus_hash)),
            ("config_hash", Text(&mut self.config_hash)),
            ("sentences", Count(&mut self.sentences)),
            ("entities", Count(&mut self.entities)),
            ("precision", Real(&mut self.precision)),
            ("recall", Real(&mut self.recall)),
            ("f1", Real(&mut self.f1)),
            ("nerr", OptReal(&mut self.nerr)),
            ("swr_attack", Real(&mut self.swr_attack)),
            ("swr_testset", Real(&mut self.swr_testset)),
            ("swr_diff", Real(&mut self.swr_diff)),
            ("rouge1", OptReal(&mut self.rouge1)),
            ("rougeL", OptReal(&mut self.rouge_l)),
            ("bleu1", OptReal(&mut self.bleu1)),
            ("bleu2", OptReal(&mut self.bleu2)),
            ("bleu4", OptReal(&mut self.bleu4)),
            ("embedding_similarity", OptReal(&mut self.embedding_similarity)),
            ("perplexity", OptReal(&mut self.perplexity)),
            ("emr", OptReal(&mut self.emr)),
            ("edit_distance_mean", OptReal(&mut self.edit_distance_mean)),
            ("edit_distance_median", OptReal(&mut self.edit_distance_median)),
            ("threshold", OptReal(&mut self.threshold)),
            ("sweep_csv", OptText(&mut self.sweep_csv)),
        ]
    }

    /// Field names in serialization order.
    pub fn keys() -> Vec<&'static str> {
        MetricsReport::default().fields().into_iter().map(|(k, _)| k).collect()
    }

    /// Values in [`MetricsReport::keys`] order; absent values are `none`.
    pub fn values(&self) -> Vec<String> {
        let mut copy = self.clone();
        copy.fields()
            .into_iter()
            .map(|(_, f)| match f {
                Field::Text(s) => s.clone(),
                Field::Count(n) => n.to_string(),
                Field::Real(x) => x.to_string(),
                Field::OptReal(x) => x.map_or(NONE.into(), |x| x.to_string()),
                Field::OptText(s) => s.clone().unwrap_or_else(|| NONE.into()),
            })
            .collect()
    }

    /// Flat `key = value` document, one field per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::keys().into_iter().zip(self.values()) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses [`MetricsReport::to_kv`] output. Every field must be present
    /// exactly once.
    pub fn from_kv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "<report>".into(),
            line,
            msg,
        };
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(i + 1, format!("expected key = value, got {line:?}")))?;
            if seen
                .insert(k.trim().to_string(), (i + 1, v.trim().to_string()))
                .is_some()
            {
                return Err(bad(i + 1, format!("duplicate key {}", k.trim())));
            }
        }
        let mut report = MetricsReport::default();
        for (key, field) in report.fields() {
            let (line, v) = seen.remove(key).ok_or_else(|| bad(0, format!("missing key {key}")))?;
            let real = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(line, format!("{key}: {v:?} is not a finite number")))
            };
            match field {
                Field::Text(s) => *s = v,
                Field::Count(n) => {
                    *n = v
                        .parse()
                        .map_err(|_| bad(line, format!("{key}: {v:?} is not a count")))?
                }
                Field::Real(x) => *x = real(&v)?,
                Field::OptReal(x) => *x = if v == NONE { None } else { Some(real(&v)?) },
                Field::OptText(s) => *s = (v != NONE).then_some(v),
            }
        }
        if let Some((k, (line, _))) = seen.into_iter().next() {
            return Err(bad(line, format!("unknown key {k}")));
        }
        Ok(report)
    }

    /// CSV header matching [`MetricsReport::csv_row`].
    pub fn csv_header() -> String {
        Self::keys().join(",")
    }

    /// One CSV row; absent values are empty cells.
    pub fn csv_row(&self) -> String {
        self.values()
            .into_iter()
            .map(|v| if v == NONE { String::new() } else { csv_escape(&v) })
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn csv_escape(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}
