//! Acceptance gate: one test per criterion, each printing a PASS line with its
//! measured value. Run with `cargo test --test acceptance -- --nocapture`.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use neurodecipher::corpus::{synthesize, SynthSpec};
use neurodecipher::cost::{edit_distance, expected_edit_distance};
use neurodecipher::eval::score;
use neurodecipher::seq2seq::{
    forward, init_params, regularizer, ModelConfig, RegVariant,
};
use neurodecipher::trainer::{train, train_no_flow, DemandSchedule, TrainConfig};

// ---------------------------------------------------------------- criterion 1

#[test]
fn gradient_oracle() {
    let t = Instant::now();
    neurodecipher::selftest::check_gradients(20, 1e-3, 2024).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 120.0, "gradient oracle took {secs:.0}s (budget 120s)");
    println!("PASS gradient oracle: 20 tiny models, all entries within rel err 1e-3 ({secs:.1}s)");
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn flow_oracle() {
    let t = Instant::now();
    neurodecipher::selftest::check_flow(200, 77).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 60.0, "flow oracle took {secs:.0}s (budget 60s)");
    println!("PASS flow oracle: 200 instances match exhaustive enumeration exactly ({secs:.1}s)");
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn regularizer_invariants() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let len = rng.gen_range(2..=12);
        // dyadic start keeps +1 and +0.5 stepping exactly representable
        let start = rng.gen_range(-12..12) as f64 * 0.25;

        // +1-monotonic trace: Omega1 exactly zero
        let mono: Vec<f64> = (0..len).map(|t| start + t as f64).collect();
        assert_eq!(regularizer(&mono, RegVariant::Omega1), 0.0);

        // two-steps-per-symbol trace (half-step increments): Omega2 exactly zero
        let half: Vec<f64> = (0..len).map(|t| start + t as f64 * 0.5).collect();
        assert_eq!(regularizer(&half, RegVariant::Omega2), 0.0);

        // a stall or skip at a random interior step must cost something
        let k = rng.gen_range(1..len);
        let bump = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        let mut stalled = mono.clone();
        for p in stalled.iter_mut().skip(k) {
            *p += bump;
        }
        assert!(regularizer(&stalled, RegVariant::Omega1) > 0.0);
        let mut stalled2 = half.clone();
        for p in stalled2.iter_mut().skip(k) {
            *p += bump;
        }
        if len > 2 {
            assert!(regularizer(&stalled2, RegVariant::Omega2) > 0.0);
        }
    }
    println!("PASS regularizer invariants: 1000 random traces");
}

// ---------------------------------------------------------------- criterion 4

/// Independent oracle: breadth-first enumeration of edit scripts.
fn edit_oracle(a: &[u32], b: &[u32], max_depth: usize) -> Option<usize> {
    use std::collections::HashSet;
    let alphabet: HashSet<u32> = a.iter().chain(b.iter()).copied().collect();
    let mut frontier: HashSet<Vec<u32>> = HashSet::new();
    frontier.insert(a.to_vec());
    for depth in 0..=max_depth {
        if frontier.contains(b) {
            return Some(depth);
        }
        let mut next = HashSet::new();
        for s in &frontier {
            for i in 0..s.len() {
                let mut d = s.clone();
                d.remove(i);
                next.insert(d);
                for &c in &alphabet {
                    let mut t = s.clone();
                    t[i] = c;
                    next.insert(t);
                }
            }
            for i in 0..=s.len() {
                for &c in &alphabet {
                    let mut t = s.clone();
                    t.insert(i, c);
                    next.insert(t);
                }
            }
        }
        frontier = next;
    }
    None
}

#[test]
fn edit_distance_metric() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let mut word = |max: usize| -> Vec<u32> {
            let len = rng.gen_range(0..=max);
            (0..len).map(|_| rng.gen_range(0..6)).collect()
        };
        let (a, b, c) = (word(10), word(10), word(10));
        let dab = edit_distance(&a, &b);
        assert_eq!(dab, edit_distance(&b, &a), "symmetry");
        assert_eq!(dab == 0, a == b, "identity");
        assert!(
            dab <= edit_distance(&a, &c) + edit_distance(&c, &b),
            "triangle inequality"
        );
        assert!(dab >= a.len().abs_diff(b.len()) && dab <= a.len().max(b.len()), "length bounds");
    }
    let kitten: Vec<u32> = "kitten".bytes().map(u32::from).collect();
    let sitting: Vec<u32> = "sitting".bytes().map(u32::from).collect();
    assert_eq!(edit_distance(&kitten, &sitting), 3);
    assert!(edit_oracle(&kitten, &sitting, 2).is_none());
    assert_eq!(edit_oracle(&kitten, &sitting, 3), Some(3));
    println!("PASS edit distance: metric properties on 10000 triples; kitten/sitting = 3 vs script enumeration");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn monte_carlo_expectation() {
    // enumerable toy model: 2 output symbols + EOS, two decoder steps
    let config = ModelConfig {
        embed_dim: 4,
        hidden: 4,
        universal: 5,
        max_decode_len: 2,
        ..Default::default()
    };
    let params = init_params(&config, 3, 2, 55);
    let x = [0u32, 1, 2];
    let y = [1u32, 0];

    // exact expectation over every decodable output sequence
    let mut exact = 0.0;
    let mut mass = 0.0;
    // complete sequences (EOS within the length cap): lengths 0 and 1
    for s in [vec![], vec![0u32], vec![1u32]] {
        let p = forward(&params, &config, &x, &s).0.exp();
        exact += p * edit_distance(&s, &y) as f64;
        mass += p;
    }
    // truncated sequences: both symbols emitted, no EOS
    for s in [[0u32, 0], [0, 1], [1, 0], [1, 1]] {
        let trace = forward(&params, &config, &x, &s).1;
        // drop the final EOS factor: probability of the prefix alone
        let p: f64 = trace.step_logprobs[..2].iter().sum::<f64>().exp();
        exact += p * edit_distance(&s, &y) as f64;
        mass += p;
    }
    assert!((mass - 1.0).abs() < 1e-9, "enumeration must cover all outcomes (mass {mass})");

    let mc = expected_edit_distance(&params, &config, &x, &y, 1000, 99);
    let gap = (mc - exact).abs();
    assert!(gap <= 0.05, "MC {mc:.4} vs exact {exact:.4} (gap {gap:.4} > 0.05)");
    println!("PASS Monte-Carlo expectation: M=1000 estimate {mc:.4} vs exact {exact:.4} (gap {gap:.4} <= 0.05)");
}

// ------------------------------------------------------- criteria 6-9 helpers

fn desk_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        hidden: 32,
        universal: 20,
        sample_count: 10,
        ..Default::default()
    }
}

fn desk_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        model: desk_model(),
        iterations,
        schedule: DemandSchedule::Constant,
        gamma: 0.9,
        subset_fraction: 1.0,
        epochs: 20,
        warmup_epochs: Some(12),
        batch_size: 64,
        learning_rate: 1e-2,
        train_sources: 10,
        seed: 0,
        ..Default::default()
    }
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn end_to_end_noiseless() {
    let t = Instant::now();
    let spec = SynthSpec {
        vocab_size: 200,
        symbol_count: 20,
        ..Default::default()
    };
    let corpus = synthesize(&spec, 7).unwrap();
    let mut cfg = desk_config(5);
    cfg.cognates = Some(200);
    let outcome = train(&corpus.lost, &corpus.known, &cfg, Some(&corpus.gold)).unwrap();
    let acc = score(&outcome.pairs, &corpus.gold).accuracy;
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 600.0, "noiseless run took {secs:.0}s (budget 600s)");
    assert!(acc >= 0.95, "noiseless accuracy {acc:.3} < 0.95");
    println!("PASS end-to-end noiseless: accuracy {acc:.3} >= 0.95 in {secs:.0}s (budget 600s)");
}

// ---------------------------------------------------------------- criterion 7

fn noisy_corpus() -> neurodecipher::corpus::SynthCorpus {
    let spec = SynthSpec {
        vocab_size: 200,
        symbol_count: 20,
        insertion_rate: 0.05,
        deletion_rate: 0.05,
        unpaired_lost: 0.3,
        unpaired_known: 0.3,
        ..Default::default()
    };
    synthesize(&spec, 7).unwrap()
}

fn noisy_config(corpus: &neurodecipher::corpus::SynthCorpus) -> TrainConfig {
    let mut cfg = desk_config(7);
    cfg.schedule = DemandSchedule::Ramp { start: 0.3 };
    cfg.cognates = Some(corpus.gold.pairs.len() as u64);
    // noise and unpaired words slow the first-iteration concentration a lot
    cfg.warmup_epochs = Some(40);
    cfg.epochs = 14;
    cfg
}

#[test]
fn end_to_end_noisy() {
    let t = Instant::now();
    let corpus = noisy_corpus();
    let cfg = noisy_config(&corpus);
    let outcome = train(&corpus.lost, &corpus.known, &cfg, Some(&corpus.gold)).unwrap();
    let acc = score(&outcome.pairs, &corpus.gold).accuracy;
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 1200.0, "noisy run took {secs:.0}s (budget 1200s)");
    assert!(acc >= 0.80, "noisy accuracy {acc:.3} < 0.80");
    println!("PASS end-to-end noisy: accuracy {acc:.3} >= 0.80 in {secs:.0}s (budget 1200s)");
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn end_to_end_syllabic() {
    let t = Instant::now();
    let spec = SynthSpec {
        vocab_size: 200,
        symbol_count: 20,
        syllabic: true,
        ..Default::default()
    };
    let corpus = synthesize(&spec, 7).unwrap();
    let mut cfg = desk_config(5);
    cfg.model = cfg.model.syllabic();
    cfg.model.universal = 40;
    cfg.cognates = Some(200);
    let outcome = train(&corpus.lost, &corpus.known, &cfg, Some(&corpus.gold)).unwrap();
    let acc = score(&outcome.pairs, &corpus.gold).accuracy;
    let secs = t.elapsed().as_secs_f64();
    assert!(acc >= 0.85, "syllabic accuracy {acc:.3} < 0.85");
    println!("PASS end-to-end syllabic: accuracy {acc:.3} >= 0.85 in {secs:.0}s");
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn ablation_no_flow() {
    let corpus = noisy_corpus();
    let cfg = noisy_config(&corpus);
    let full = train(&corpus.lost, &corpus.known, &cfg, Some(&corpus.gold)).unwrap();
    let full_acc = score(&full.pairs, &corpus.gold).accuracy;
    let reduced = train_no_flow(&corpus.lost, &corpus.known, &cfg).unwrap();
    let reduced_acc = score(&reduced.pairs, &corpus.gold).accuracy;
    let drop = full_acc - reduced_acc;
    assert!(
        drop >= 0.30,
        "ablation drop {drop:.3} < 0.30 (full {full_acc:.3}, reduced {reduced_acc:.3})"
    );
    println!("PASS ablation: removing flow/iterative training drops accuracy by {drop:.3} (full {full_acc:.3} -> reduced {reduced_acc:.3})");
}

// --------------------------------------------------------------- criterion 10

#[test]
fn determinism() {
    use std::process::Command;
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let bin = env!("CARGO_BIN_EXE_neurodecipher");
    let ok = Command::new(bin)
        .args(["synth", "--words", "40", "--symbols", "12", "--seed", "5"])
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(ok.success());
    let run = |out: &std::path::Path| {
        let st = Command::new(bin)
            .args(["train", "--seed", "9", "--iterations", "2", "--epochs", "2"])
            .args(["--embed-dim", "12", "--hidden", "12", "--universal", "8", "--samples", "4"])
            .args(["--subset", "1.0", "--batch-size", "64"])
            .arg("--lost")
            .arg(data.join("lost.txt"))
            .arg("--known")
            .arg(data.join("known.txt"))
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(out.join("pairs.tsv")).unwrap()
    };
    let a = run(&dir.path().join("run_a"));
    let b = run(&dir.path().join("run_b"));
    assert!(!a.is_empty());
    assert_eq!(a, b, "pair TSVs differ between identical runs");
    println!("PASS determinism: identical seeds give byte-identical pair TSVs ({} bytes)", a.len());
}
