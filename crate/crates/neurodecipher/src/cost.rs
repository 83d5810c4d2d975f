//! Edit distance and Monte-Carlo expected edit distance between model samples
//! and known words; sparsified cost matrices for the flow solver.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SymId, SymbolInventory, Vocabulary, WordFormat};
use crate::error::Result;
use crate::seq2seq::{greedy_decode, sample, ModelConfig, ModelParams};

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn edit_distance(a: &[SymId], b: &[SymId]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One retained candidate for a lost word.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub known: usize,
    pub cost: f64,
}

/// Sparse expected-edit-distance matrix: for each lost word, its `k`
/// lowest-cost known-word candidates, sorted by (cost, index).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostMatrix {
    pub candidates: Vec<Vec<Candidate>>,
}

impl CostMatrix {
    pub fn n_lost(&self) -> usize {
        self.candidates.len()
    }

    pub fn get(&self, lost: usize, known: usize) -> Option<f64> {
        self.candidates[lost]
            .iter()
            .find(|c| c.known == known)
            .map(|c| c.cost)
    }
}

/// Flow edge costs are integral: real costs scaled by 1000 and rounded.
pub const COST_SCALE: f64 = 1000.0;

pub fn scale_cost(cost: f64) -> i64 {
    (cost * COST_SCALE).round() as i64
}

fn per_word_seed(seed: u64, i: usize) -> u64 {
    // splitmix64 over (seed, i) so each lost word gets an independent stream
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(i as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mean edit distance from `m` decoder samples for `x` to the target `y`.
/// Deterministic given the seed; duplicates among samples are retained.
pub fn expected_edit_distance(
    params: &ModelParams,
    config: &ModelConfig,
    x: &[SymId],
    y: &[SymId],
    m: usize,
    seed: u64,
) -> f64 {
    assert!(m >= 1);
    let samples = sample(params, config, x, m, seed);
    mean_distance(&samples, y)
}

fn mean_distance(samples: &[Vec<SymId>], y: &[SymId]) -> f64 {
    let total: usize = samples.iter().map(|s| edit_distance(s, y)).sum();
    total as f64 / samples.len() as f64
}

/// Builds the sparsified cost matrix: one shared sample set per lost word
/// (plus the greedy decode as an extra pseudo-sample), expected distances to
/// every known word, then the `k` cheapest candidates retained.
pub fn build_cost_matrix(
    params: &ModelParams,
    config: &ModelConfig,
    lost: &Vocabulary,
    known: &Vocabulary,
    k: usize,
    m: usize,
    seed: u64,
) -> CostMatrix {
    let candidates: Vec<Vec<Candidate>> = (0..lost.len())
        .into_par_iter()
        .map(|i| {
            let x = lost.word(i);
            let mut samples = sample(params, config, x, m, per_word_seed(seed, i));
            samples.push(greedy_decode(params, config, x).symbols);
            let mut costs: Vec<Candidate> = (0..known.len())
                .map(|j| Candidate {
                    known: j,
                    cost: mean_distance(&samples, known.word(j)),
                })
                .collect();
            costs.sort_by(|a, b| {
                a.cost
                    .partial_cmp(&b.cost)
                    .unwrap()
                    .then(a.known.cmp(&b.known))
            });
            costs.truncate(k);
            costs
        })
        .collect();
    CostMatrix { candidates }
}

/// Diagnostic dump: TSV of (lost word, known word, cost), sorted by lost word
/// then cost.
pub fn write_cost_matrix(
    path: &Path,
    matrix: &CostMatrix,
    lost: &Vocabulary,
    lost_inv: &SymbolInventory,
    known: &Vocabulary,
    known_inv: &SymbolInventory,
    format: WordFormat,
) -> Result<()> {
    let mut out = String::new();
    for (i, cands) in matrix.candidates.iter().enumerate() {
        for c in cands {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                lost_inv.render(lost.word(i), format),
                known_inv.render(known.word(c.known), format),
                c.cost
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}
