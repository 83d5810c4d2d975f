//! Scoring predicted cognate assignments against gold tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::GoldTable;
use crate::error::{Error, Result};
use crate::trainer::RunRecord;

/// Cognate identification metrics.
///
/// `accuracy` counts a gold lost word correct when its emitted partner appears
/// among its gold partners (multi-reference); lost words absent from gold are
/// excluded from accuracy but count toward the precision denominator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub gold_pairs: usize,
    pub gold_lost_words: usize,
    pub emitted_pairs: usize,
    pub correct_lost_words: usize,
    pub correct_pairs: usize,
    /// Set when the emitted set is empty and precision is undefined.
    pub degenerate: bool,
    /// Per emitted pair: (lost, known, is a gold pair).
    pub pair_flags: Vec<(usize, usize, bool)>,
}

pub fn score(pairs: &[(usize, usize, f64)], gold: &GoldTable) -> EvalReport {
    let gold_lost = gold.lost_words();
    let mut correct_lost = 0usize;
    let mut correct_pairs = 0usize;
    let mut pair_flags = Vec::with_capacity(pairs.len());
    let mut seen_correct: std::collections::BTreeSet<usize> = Default::default();
    for &(i, j, _) in pairs {
        let hit = gold.pairs.contains(&(i, j));
        if hit {
            correct_pairs += 1;
            if seen_correct.insert(i) {
                correct_lost += 1;
            }
        }
        pair_flags.push((i, j, hit));
    }
    let degenerate = pairs.is_empty();
    let accuracy = if gold_lost.is_empty() {
        0.0
    } else {
        correct_lost as f64 / gold_lost.len() as f64
    };
    let precision = if degenerate {
        0.0
    } else {
        correct_pairs as f64 / pairs.len() as f64
    };
    EvalReport {
        accuracy,
        precision,
        gold_pairs: gold.len(),
        gold_lost_words: gold_lost.len(),
        emitted_pairs: pairs.len(),
        correct_lost_words: correct_lost,
        correct_pairs,
        degenerate,
        pair_flags,
    }
}

/// Scores two TSV files (pairs: lost, known, [weight]; gold: lost, known) by
/// word strings.
pub fn score_tsv(pairs_path: &Path, gold_path: &Path) -> Result<EvalReport> {
    let read_two_cols = |path: &Path| -> Result<Vec<(String, String)>> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let a = cols.next().unwrap_or_default();
            let b = cols.next().ok_or_else(|| {
                Error::Input(format!(
                    "{}:{}: expected at least two tab-separated columns",
                    path.display(),
                    lineno + 1
                ))
            })?;
            out.push((a.to_string(), b.to_string()));
        }
        Ok(out)
    };
    let emitted = read_two_cols(pairs_path)?;
    let gold_rows = read_two_cols(gold_path)?;

    // map word strings onto dense indices and reuse the index-based scorer
    let mut lost_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut known_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (l, k) in emitted.iter().chain(gold_rows.iter()) {
        let n = lost_ids.len();
        lost_ids.entry(l.as_str()).or_insert(n);
        let n = known_ids.len();
        known_ids.entry(k.as_str()).or_insert(n);
    }
    let gold = GoldTable {
        pairs: gold_rows
            .iter()
            .map(|(l, k)| (lost_ids[l.as_str()], known_ids[k.as_str()]))
            .collect(),
    };
    let pairs: Vec<(usize, usize, f64)> = emitted
        .iter()
        .map(|(l, k)| (lost_ids[l.as_str()], known_ids[k.as_str()], 1.0))
        .collect();
    Ok(score(&pairs, &gold))
}

/// Full run report: config echo, per-iteration metrics and final scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub record: RunRecord,
    pub eval: Option<EvalReport>,
}

/// Writes the machine-readable JSON report plus a human-readable summary.
pub fn report(record: &RunRecord, eval: Option<&EvalReport>, path: &Path) -> Result<()> {
    let full = Report {
        record: record.clone(),
        eval: eval.cloned(),
    };
    let json = serde_json::to_string_pretty(&full).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, json)?;

    let mut txt = String::new();
    txt.push_str(&format!("seed: {}\n", record.config.seed));
    txt.push_str(&format!("iterations: {}\n", record.iterations.len()));
    for it in &record.iterations {
        txt.push_str(&format!(
            "iter {}: loss {:.4}  flow cost {:.3}  demand {}/{}{}\n",
            it.iteration,
            it.mean_loss,
            it.flow_objective,
            it.demand_used,
            it.demand_requested,
            it.accuracy
                .map(|a| format!("  acc {:.3}", a))
                .unwrap_or_default()
        ));
    }
    txt.push_str(&format!("final flow objective: {:.3}\n", record.final_objective));
    if let Some(e) = eval {
        txt.push_str(&format!(
            "accuracy: {:.4}  precision: {:.4}  ({} / {} gold lost words)\n",
            e.accuracy, e.precision, e.correct_lost_words, e.gold_lost_words
        ));
    }
    for w in &record.warnings {
        txt.push_str(&format!("warning: {w}\n"));
    }
    fs::write(path.with_extension("txt"), txt)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(pairs: &[(usize, usize)]) -> GoldTable {
        GoldTable {
            pairs: pairs.iter().copied().collect(),
        }
    }

    #[test]
    fn exact_match_scores_one() {
        let g = gold(&[(0, 0), (1, 1)]);
        let pairs = vec![(0, 0, 1.0), (1, 1, 1.0)];
        let r = score(&pairs, &g);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.precision, 1.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn empty_emitted_is_degenerate() {
        let g = gold(&[(0, 0)]);
        let r = score(&[], &g);
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.precision, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn multi_reference_counts_any_gold_partner() {
        let g = gold(&[(0, 0), (0, 5), (1, 1)]);
        let pairs = vec![(0, 5, 1.0), (1, 2, 1.0)];
        let r = score(&pairs, &g);
        // lost word 0 correct via its second reference; lost word 1 wrong
        assert!((r.accuracy - 0.5).abs() < 1e-12);
        assert!((r.precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_gold_lost_words_only_affect_precision() {
        let g = gold(&[(0, 0)]);
        let base = score(&[(0, 0, 1.0)], &g);
        let extra = score(&[(0, 0, 1.0), (9, 3, 1.0)], &g);
        assert_eq!(base.accuracy, extra.accuracy);
        assert!(extra.precision < base.precision);
    }

    #[test]
    fn permutation_invariant() {
        let g = gold(&[(0, 0), (1, 1), (2, 0)]);
        let a = score(&[(0, 0, 1.0), (1, 2, 1.0), (2, 0, 1.0)], &g);
        let b = score(&[(2, 0, 1.0), (0, 0, 1.0), (1, 2, 1.0)], &g);
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.precision, b.precision);
    }
}
