//! Built-in correctness suites: finite-difference gradient checks and an
//! exhaustive-enumeration oracle for the flow solver. Run by `selftest` and by
//! the acceptance tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::flow::{solve_max, FlowNetwork};
use crate::seq2seq::{gradients, init_params, loss, ModelConfig, TrainingPair};

/// Relative error with an absolute floor for near-zero pairs.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks analytic gradients of `models` random tiny models against central
/// finite differences. Every entry must match within `tol` relative error.
pub fn check_gradients(models: usize, tol: f64, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for m in 0..models {
        let config = ModelConfig {
            embed_dim: 4,
            hidden: 4,
            universal: 5,
            lambda: if m % 2 == 0 { 0.5 } else { 0.0 },
            regularizer: if m % 3 == 0 {
                crate::seq2seq::RegVariant::Omega2
            } else {
                crate::seq2seq::RegVariant::Omega1
            },
            ..Default::default()
        };
        let n_lost = rng.gen_range(2..=4);
        let n_known = rng.gen_range(2..=4);
        let params = init_params(&config, n_lost, n_known, rng.gen());
        let mut words = |n: usize| -> Vec<Vec<u32>> {
            (0..2)
                .map(|_| {
                    let len = rng.gen_range(1..=5);
                    (0..len).map(|_| rng.gen_range(0..n as u32)).collect()
                })
                .collect()
        };
        let xs = words(n_lost);
        let ys = words(n_known);
        let pairs: Vec<TrainingPair> = xs
            .iter()
            .flat_map(|x| {
                ys.iter().map(move |y| TrainingPair {
                    x,
                    y,
                    flow: 0.5,
                    group: y.len(),
                })
            })
            .collect();

        let (_, analytic) = gradients(&params, &config, &pairs)
            .map_err(|e| format!("model {m}: {e}"))?;
        let flat_g = analytic.to_flat();
        let base_flat = params.to_flat();
        let eps = 1e-5;
        for k in 0..base_flat.len() {
            let mut plus = base_flat.clone();
            plus[k] += eps;
            let mut minus = base_flat.clone();
            minus[k] -= eps;
            let mut p = params.zeroed();
            p.set_from_flat(&plus);
            let lp = loss(&p, &config, &pairs);
            p.set_from_flat(&minus);
            let lm = loss(&p, &config, &pairs);
            let fd = (lp - lm) / (2.0 * eps);
            let err = rel_err(flat_g[k], fd);
            if err > tol {
                return Err(format!(
                    "model {m}, entry {k}: analytic {} vs finite-difference {} (rel err {err:.2e})",
                    flat_g[k], fd
                ));
            }
        }
    }
    Ok(())
}

/// Exhaustive minimum over all feasible assignments: each lost word uses at
/// most one edge, each known word at most `known_capacity` units. Returns
/// (max routable units, min cost at min(demand, max units)).
pub fn enumerate_min_cost(network: &FlowNetwork) -> (u64, i64) {
    // edges grouped per lost word
    let mut per_lost: Vec<Vec<(usize, i64)>> = vec![Vec::new(); network.n_lost];
    for &(i, j, c) in &network.edges {
        per_lost[i].push((j, c));
    }
    let mut best_units = 0u64;
    let mut best_cost = i64::MAX;
    let mut used = vec![0i64; network.n_known];

    fn recurse(
        i: usize,
        units: u64,
        cost: i64,
        per_lost: &[Vec<(usize, i64)>],
        used: &mut [i64],
        cap: i64,
        demand: u64,
        best_units: &mut u64,
        best_cost: &mut i64,
    ) {
        if i == per_lost.len() {
            let units = units.min(demand);
            if units > *best_units || (units == *best_units && cost < *best_cost) {
                *best_units = units;
                *best_cost = cost;
            }
            return;
        }
        // skip this lost word
        recurse(i + 1, units, cost, per_lost, used, cap, demand, best_units, best_cost);
        if units < demand {
            for &(j, c) in &per_lost[i] {
                if used[j] < cap {
                    used[j] += 1;
                    recurse(i + 1, units + 1, cost + c, per_lost, used, cap, demand, best_units, best_cost);
                    used[j] -= 1;
                }
            }
        }
    }
    recurse(
        0,
        0,
        0,
        &per_lost,
        &mut used,
        network.known_capacity,
        network.demand,
        &mut best_units,
        &mut best_cost,
    );
    (best_units, best_cost)
}

/// Random small flow instances solved both ways; totals must agree exactly.
pub fn check_flow(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for t in 0..instances {
        let n_lost = rng.gen_range(1..=6);
        let n_known = rng.gen_range(1..=6);
        let demand = rng.gen_range(1..=4u64);
        let known_capacity = rng.gen_range(1..=2i64);
        let mut edges = Vec::new();
        for i in 0..n_lost {
            for j in 0..n_known {
                if rng.gen_bool(0.6) {
                    edges.push((i, j, rng.gen_range(0..=20i64)));
                }
            }
        }
        let network = FlowNetwork {
            n_lost,
            n_known,
            edges,
            known_capacity,
            demand,
        };
        let sol = solve_max(&network);
        let (units, min_cost) = enumerate_min_cost(&network);
        if sol.flow != units {
            return Err(format!(
                "instance {t}: solver routed {} units, enumeration says {units}",
                sol.flow
            ));
        }
        if units > 0 && sol.total_cost != min_cost {
            return Err(format!(
                "instance {t}: solver cost {}, enumeration minimum {min_cost}",
                sol.total_cost
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_small() {
        check_gradients(2, 1e-3, 11).unwrap();
    }

    #[test]
    fn flow_suite_small() {
        check_flow(40, 5).unwrap();
    }

    #[test]
    fn enumeration_respects_capacity() {
        let network = FlowNetwork {
            n_lost: 2,
            n_known: 1,
            edges: vec![(0, 0, 3), (1, 0, 4)],
            known_capacity: 1,
            demand: 2,
        };
        let (units, cost) = enumerate_min_cost(&network);
        assert_eq!(units, 1);
        assert_eq!(cost, 3);
    }
}
