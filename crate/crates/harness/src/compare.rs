//! Side-by-side attacker comparison for one victim and corpus.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use embinv_core::MetricsReport;

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn rows(r: &MetricsReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("precision", Some(r.precision)),
        ("recall", Some(r.recall)),
        ("f1", Some(r.f1)),
        ("swr_diff", Some(r.swr_diff)),
        ("nerr", r.nerr),
    ]
}

/// Returns `(csv, text table)`. The text table marks the best F1 as `**x**`.
pub fn compare_attackers(reports: &[MetricsReport]) -> Result<(String, String)> {
    let Some(first) = reports.first() else {
        bail!("no reports to compare");
    };
    for r in reports {
        if r.corpus_hash != first.corpus_hash {
            bail!(
                "reports use different corpora ({} vs {})",
                first.corpus_hash,
                r.corpus_hash
            );
        }
        if r.victim_id != first.victim_id {
            bail!(
                "reports attack different victims ({} vs {})",
                first.victim_id,
                r.victim_id
            );
        }
    }
    let best_f1 = reports.iter().map(|r| r.f1).fold(f64::NEG_INFINITY, f64::max);
    let names: Vec<&str> = reports.iter().map(|r| r.attacker.as_str()).collect();
    let metric_names: Vec<&str> = rows(first).into_iter().map(|(n, _)| n).collect();

    let mut csv = format!("victim,metric,{}\n", names.join(","));
    let mut cells: Vec<Vec<String>> = vec![std::iter::once("metric".to_string())
        .chain(names.iter().map(|s| s.to_string()))
        .collect()];
    for (m, name) in metric_names.iter().enumerate() {
        let values: Vec<Option<f64>> = reports.iter().map(|r| rows(r)[m].1).collect();
        let plain: Vec<String> = values
            .iter()
            .map(|v| v.map_or(String::new(), |x| x.to_string()))
            .collect();
        let _ = writeln!(csv, "{},{name},{}", first.victim_id, plain.join(","));
        let shown = values.iter().zip(reports).map(|(v, r)| {
            if *name == "f1" && r.f1 == best_f1 {
                format!("**{}**", fmt(*v))
            } else {
                fmt(*v)
            }
        });
        cells.push(std::iter::once(name.to_string()).chain(shown).collect());
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut text = format!("victim: {}\n", first.victim_id);
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        let _ = writeln!(text, "{}", line.join("  ").trim_end());
    }
    Ok((csv, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(attacker: &str, f1: f64) -> MetricsReport {
        MetricsReport {
            attacker: attacker.into(),
            victim_id: "bag".into(),
            corpus_hash: "c".into(),
            f1,
            nerr: Some(0.1),
            ..Default::default()
        }
    }

    #[test]
    fn three_columns_and_bold_best() {
        let (csv, text) = compare_attackers(&[report("mlc", 0.3), report("msp", 0.4), report("geia", 0.6)]).unwrap();
        assert!(csv.starts_with("victim,metric,mlc,msp,geia\n"));
        assert_eq!(csv.lines().count(), 6);
        assert!(text.contains("**0.6000**"));
        assert_eq!(text.matches("**").count(), 2);
        let header = text.lines().nth(1).unwrap();
        assert!(header.contains("mlc") && header.contains("geia"));
    }

    #[test]
    fn single_report() {
        let (csv, _) = compare_attackers(&[report("geia", 0.5)]).unwrap();
        assert!(csv.starts_with("victim,metric,geia\n"));
    }

    #[test]
    fn mismatched_victims_or_corpora() {
        let mut other = report("msp", 0.2);
        other.victim_id = "transformer".into();
        assert!(compare_attackers(&[report("geia", 0.5), other]).is_err());
        let mut other = report("msp", 0.2);
        other.corpus_hash = "d".into();
        assert!(compare_attackers(&[report("geia", 0.5), other]).is_err());
        assert!(compare_attackers(&[]).is_err());
    }
}
