//! Threshold-sweep CSV: `victim,threshold,precision,recall,f1`.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub victim: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn write(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["victim", "threshold", "precision", "recall", "f1"])?;
    }
    Ok(String::from_utf8(w.into_inner().context("flushing sweep rows")?)?)
}

/// Parses and validates sweep rows: finite values in `[0, 1]`.
pub fn parse(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<SweepRow>().enumerate() {
        let row = rec.with_context(|| format!("sweep row {}", i + 1))?;
        for (name, v) in [
            ("threshold", row.threshold),
            ("precision", row.precision),
            ("recall", row.recall),
            ("f1", row.f1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bail!("sweep row {}: {name} {v} outside [0, 1]", i + 1);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
