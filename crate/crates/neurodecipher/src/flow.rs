//! Minimum-cost-flow assignment between lost and known words, plus the decayed
//! flow state carried across training iterations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{SymbolInventory, Vocabulary, WordFormat};
use crate::cost::{scale_cost, CostMatrix};
use crate::error::{Error, Result};

/// Bipartite flow network: source -> lost words -> known words -> sink.
///
/// Source and lost-side edges have capacity 1 and cost 0; known-to-sink edges
/// have capacity `known_capacity`; only the middle edges carry costs.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    pub n_lost: usize,
    pub n_known: usize,
    /// (lost index, known index, integral cost)
    pub edges: Vec<(usize, usize, i64)>,
    pub known_capacity: i64,
    pub demand: u64,
}

impl FlowNetwork {
    pub fn from_cost_matrix(
        matrix: &CostMatrix,
        n_known: usize,
        demand: u64,
        known_capacity: i64,
    ) -> Self {
        let mut edges = Vec::new();
        for (i, cands) in matrix.candidates.iter().enumerate() {
            for c in cands {
                edges.push((i, c.known, scale_cost(c.cost)));
            }
        }
        FlowNetwork {
            n_lost: matrix.n_lost(),
            n_known,
            edges,
            known_capacity,
            demand,
        }
    }
}

/// Integral solver output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowSolution {
    /// Saturated middle edges, sorted.
    pub assignment: Vec<(usize, usize)>,
    /// Total scaled cost of the assignment.
    pub total_cost: i64,
    /// Units of flow actually routed.
    pub flow: u64,
}

struct ResidualEdge {
    to: usize,
    cap: i64,
    cost: i64,
}

struct Residual {
    edges: Vec<ResidualEdge>,
    adj: Vec<Vec<usize>>,
}

impl Residual {
    fn new(n: usize) -> Self {
        Residual {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: i64) {
        let id = self.edges.len();
        self.edges.push(ResidualEdge { to, cap, cost });
        self.edges.push(ResidualEdge { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
    }
}

/// Solves for an integral minimum-cost flow meeting the demand exactly, by
/// successive shortest augmenting paths with node potentials.
///
/// Errors with the max feasible flow when the demand cannot be met.
pub fn solve_mcf(network: &FlowNetwork) -> Result<FlowSolution> {
    let sol = solve_max(network);
    if sol.flow < network.demand {
        return Err(Error::Infeasible {
            demand: network.demand,
            max_feasible: sol.flow,
        });
    }
    Ok(sol)
}

/// Routes min(demand, max feasible) units at minimum cost.
pub fn solve_max(network: &FlowNetwork) -> FlowSolution {
    let n_nodes = network.n_lost + network.n_known + 2;
    let source = 0usize;
    let sink = n_nodes - 1;
    let lost_node = |i: usize| 1 + i;
    let known_node = |j: usize| 1 + network.n_lost + j;

    let mut g = Residual::new(n_nodes);
    for i in 0..network.n_lost {
        g.add(source, lost_node(i), 1, 0);
    }
    // remember middle-edge ids for readout
    let mut middle: Vec<(usize, usize, usize, i64)> = Vec::with_capacity(network.edges.len());
    for &(i, j, cost) in &network.edges {
        let id = g.edges.len();
        g.add(lost_node(i), known_node(j), 1, cost);
        middle.push((id, i, j, cost));
    }
    for j in 0..network.n_known {
        g.add(known_node(j), sink, network.known_capacity, 0);
    }

    let mut potential = vec![0i64; n_nodes];
    let mut flow = 0u64;
    const INF: i64 = i64::MAX / 4;

    while flow < network.demand {
        // Dijkstra on reduced costs
        let mut dist = vec![INF; n_nodes];
        let mut prev_edge = vec![usize::MAX; n_nodes];
        dist[source] = 0;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(std::cmp::Reverse((0i64, source)));
        while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &eid in &g.adj[u] {
                let e = &g.edges[eid];
                if e.cap <= 0 {
                    continue;
                }
                let nd = d + e.cost + potential[u] - potential[e.to];
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    prev_edge[e.to] = eid;
                    heap.push(std::cmp::Reverse((nd, e.to)));
                }
            }
        }
        if dist[sink] >= INF {
            break;
        }
        for v in 0..n_nodes {
            if dist[v] < INF {
                potential[v] += dist[v];
            }
        }
        // bottleneck along the path
        let mut push = i64::MAX;
        let mut v = sink;
        while v != source {
            let eid = prev_edge[v];
            push = push.min(g.edges[eid].cap);
            v = g.edges[eid ^ 1].to;
        }
        push = push.min((network.demand - flow) as i64);
        let mut v = sink;
        while v != source {
            let eid = prev_edge[v];
            g.edges[eid].cap -= push;
            g.edges[eid ^ 1].cap += push;
            v = g.edges[eid ^ 1].to;
        }
        flow += push as u64;
    }

    let mut assignment = Vec::new();
    let mut total_cost = 0i64;
    for &(eid, i, j, cost) in &middle {
        // forward cap started at 1; zero cap means the edge carries flow
        if g.edges[eid].cap == 0 {
            assignment.push((i, j));
            total_cost += cost;
        }
    }
    assignment.sort_unstable();
    FlowSolution {
        assignment,
        total_cost,
        flow,
    }
}

/// Fractional flow values over (lost, known) pairs across iterations.
///
/// Stored as a uniform base value plus sparse overrides so the dense
/// initialization stays cheap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub n_lost: usize,
    pub n_known: usize,
    base: f64,
    entries: BTreeMap<(usize, usize), f64>,
    /// Iteration counter.
    pub tau: u64,
}

impl FlowState {
    /// Uniform initialization: every value is `n / (|X| * |Y|)`.
    pub fn init(n_lost: usize, n_known: usize, n: u64) -> Self {
        assert!(n > 0, "cognate target must be positive");
        FlowState {
            n_lost,
            n_known,
            base: n as f64 / (n_lost as f64 * n_known as f64),
            entries: BTreeMap::new(),
            tau: 0,
        }
    }

    pub fn from_solution(n_lost: usize, n_known: usize, sol: &FlowSolution) -> Self {
        FlowState {
            n_lost,
            n_known,
            base: 0.0,
            entries: sol.assignment.iter().map(|&p| (p, 1.0)).collect(),
            tau: 0,
        }
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        *self.entries.get(&(i, j)).unwrap_or(&self.base)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Sparse overrides (pairs whose value differs from the base).
    pub fn entries(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.entries
    }

    /// Positive-value support for a known word `j`: explicit entries plus, when
    /// the base is positive, all lost words.
    pub fn sources_of(&self, j: usize) -> Vec<(usize, f64)> {
        if self.base > 0.0 {
            (0..self.n_lost).map(|i| (i, self.value(i, j))).collect()
        } else {
            self.entries
                .iter()
                .filter(|&(&(_, jj), &v)| jj == j && v > 0.0)
                .map(|(&(i, _), &v)| (i, v))
                .collect()
        }
    }
}

/// Exponential decay update: `f = gamma * prev + (1 - gamma) * raw` elementwise
/// over the union of supports.
pub fn decay_flow(prev: &FlowState, raw: &FlowSolution, gamma: f64) -> FlowState {
    assert!((0.0..1.0).contains(&gamma));
    let mut entries = BTreeMap::new();
    for (&key, &v) in &prev.entries {
        entries.insert(key, gamma * v);
    }
    for &key in &raw.assignment {
        let prev_v = prev.value(key.0, key.1);
        entries.insert(key, gamma * prev_v + (1.0 - gamma));
    }
    FlowState {
        n_lost: prev.n_lost,
        n_known: prev.n_known,
        base: gamma * prev.base,
        entries,
        tau: prev.tau + 1,
    }
}

/// For each lost word with positive mass, the argmax known partner and its
/// weight. Ties go to the lower cost, then the lower known index.
pub fn extract_pairs(state: &FlowState, costs: Option<&CostMatrix>) -> Vec<(usize, usize, f64)> {
    let cost_of = |i: usize, j: usize| -> f64 {
        costs
            .and_then(|m| m.get(i, j))
            .unwrap_or(f64::INFINITY)
    };
    let mut out = Vec::new();
    for i in 0..state.n_lost {
        let mut best: Option<(usize, f64)> = None;
        let consider = |best: &mut Option<(usize, f64)>, j: usize, v: f64| {
            if v <= 0.0 {
                return;
            }
            match *best {
                None => *best = Some((j, v)),
                Some((bj, bv)) => {
                    let better = v > bv
                        || (v == bv
                            && (cost_of(i, j) < cost_of(i, bj)
                                || (cost_of(i, j) == cost_of(i, bj) && j < bj)));
                    if better {
                        *best = Some((j, v));
                    }
                }
            }
        };
        if state.base > 0.0 {
            for j in 0..state.n_known {
                consider(&mut best, j, state.value(i, j));
            }
        } else {
            for (&(ii, j), &v) in state.entries.range((i, 0)..(i + 1, 0)) {
                debug_assert_eq!(ii, i);
                consider(&mut best, j, v);
            }
        }
        if let Some((j, v)) = best {
            out.push((i, j, v));
        }
    }
    out
}

/// Assignment dump: TSV (lost word, known word, flow weight) in extraction order.
pub fn write_pairs(
    path: &Path,
    pairs: &[(usize, usize, f64)],
    lost: &Vocabulary,
    lost_inv: &SymbolInventory,
    known: &Vocabulary,
    known_inv: &SymbolInventory,
    format: WordFormat,
) -> Result<()> {
    let mut out = String::new();
    for &(i, j, w) in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            lost_inv.render(lost.word(i), format),
            known_inv.render(known.word(j), format),
            w
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Candidate;

    fn network(costs: &[&[i64]], demand: u64, cap: i64) -> FlowNetwork {
        let mut edges = Vec::new();
        for (i, row) in costs.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                edges.push((i, j, c));
            }
        }
        FlowNetwork {
            n_lost: costs.len(),
            n_known: costs[0].len(),
            edges,
            known_capacity: cap,
            demand,
        }
    }

    #[test]
    fn single_pair() {
        let sol = solve_mcf(&network(&[&[7]], 1, 1)).unwrap();
        assert_eq!(sol.assignment, vec![(0, 0)]);
        assert_eq!(sol.total_cost, 7);
        assert_eq!(sol.flow, 1);
    }

    #[test]
    fn diagonal_zero_cost_matching() {
        let sol = solve_mcf(&network(&[&[0, 5], &[5, 0]], 2, 1)).unwrap();
        assert_eq!(sol.assignment, vec![(0, 0), (1, 1)]);
        assert_eq!(sol.total_cost, 0);
    }

    #[test]
    fn infeasible_reports_max_flow() {
        // only one known word with capacity 1, demand 2
        let err = solve_mcf(&network(&[&[1], &[2]], 2, 1)).unwrap_err();
        match err {
            Error::Infeasible { demand, max_feasible } => {
                assert_eq!(demand, 2);
                assert_eq!(max_feasible, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn relaxed_known_capacity() {
        // three lost words all cheapest at known word 0; capacity 3 permits it
        let sol = solve_mcf(&network(&[&[0, 9], &[0, 9], &[0, 9]], 3, 3)).unwrap();
        assert_eq!(sol.assignment, vec![(0, 0), (1, 0), (2, 0)]);
        assert_eq!(sol.total_cost, 0);
    }

    #[test]
    fn init_flow_uniform_values() {
        let s = FlowState::init(100, 100, 100);
        assert_eq!(s.value(0, 0), 0.01);
        assert_eq!(s.value(99, 99), 0.01);
        let s = FlowState::init(10, 10, 100);
        assert_eq!(s.value(3, 4), 1.0);
        let s = FlowState::init(1, 2, 1);
        assert_eq!(s.value(0, 0), 0.5);
        assert_eq!(s.value(0, 1), 0.5);
    }

    #[test]
    fn decay_interpolates() {
        let prev = FlowState::init(1, 1, 1); // value 1.0
        let raw = FlowSolution {
            assignment: vec![],
            total_cost: 0,
            flow: 0,
        };
        let next = decay_flow(&prev, &raw, 0.9);
        assert!((next.value(0, 0) - 0.9).abs() < 1e-12);

        let raw = FlowSolution {
            assignment: vec![(0, 0)],
            total_cost: 0,
            flow: 1,
        };
        let next = decay_flow(&FlowState::init(2, 2, 1), &raw, 0.0);
        assert_eq!(next.value(0, 0), 1.0);
        assert_eq!(next.value(0, 1), 0.0);
        assert_eq!(next.value(1, 1), 0.0);
    }

    #[test]
    fn decay_stays_in_unit_interval() {
        let mut state = FlowState::init(3, 3, 4);
        let raw = FlowSolution {
            assignment: vec![(0, 1), (1, 0), (2, 2)],
            total_cost: 0,
            flow: 3,
        };
        for _ in 0..10 {
            state = decay_flow(&state, &raw, 0.25);
            for i in 0..3 {
                for j in 0..3 {
                    let v = state.value(i, j);
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        assert_eq!(state.tau, 10);
    }

    #[test]
    fn extract_one_hot() {
        let sol = FlowSolution {
            assignment: vec![(0, 2), (1, 0)],
            total_cost: 0,
            flow: 2,
        };
        let state = FlowState::from_solution(2, 3, &sol);
        let pairs = extract_pairs(&state, None);
        assert_eq!(pairs, vec![(0, 2, 1.0), (1, 0, 1.0)]);
    }

    #[test]
    fn extract_tie_breaks_by_cost_then_index() {
        let state = FlowState::init(1, 3, 3); // uniform 1.0 everywhere
        let costs = CostMatrix {
            candidates: vec![vec![
                Candidate { known: 2, cost: 0.5 },
                Candidate { known: 0, cost: 1.0 },
                Candidate { known: 1, cost: 1.0 },
            ]],
        };
        let pairs = extract_pairs(&state, Some(&costs));
        assert_eq!(pairs, vec![(0, 2, 1.0)]);
        // without costs: lowest index wins
        let pairs = extract_pairs(&state, None);
        assert_eq!(pairs, vec![(0, 0, 1.0)]);
    }
}
