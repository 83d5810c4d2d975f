//! Command-line front end: synthetic corpus generation, training, decipherment
//! with a saved checkpoint, assignment scoring and a quick self-test.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use neurodecipher::corpus::{
    load_gold, load_vocabulary, synthesize, write_synth_corpus, Language, SynthSpec, Vocabulary,
    WordFormat,
};
use neurodecipher::cost::build_cost_matrix;
use neurodecipher::error::Result;
use neurodecipher::eval::{report, score, score_tsv};
use neurodecipher::flow::{extract_pairs, solve_max, write_pairs, FlowNetwork, FlowState};
use neurodecipher::seq2seq::{load_checkpoint, save_checkpoint};
use neurodecipher::trainer::{
    multi_restart, train_no_flow, DemandSchedule, TrainConfig, TrainOutcome,
};

#[derive(Parser)]
#[command(name = "neurodecipher", version, about = "Unsupervised decipherment of lost scripts")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// One Unicode codepoint per symbol.
    Plain,
    /// Whitespace-separated symbol tokens.
    Spaced,
}

impl From<FormatArg> for WordFormat {
    fn from(f: FormatArg) -> WordFormat {
        match f {
            FormatArg::Plain => WordFormat::Plain,
            FormatArg::Spaced => WordFormat::SpaceSeparated,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic lost/known corpus with gold pairs.
    Synth(SynthArgs),
    /// Train the cognate model and emit predicted pairs.
    Train(TrainArgs),
    /// Decipher a word list with a saved checkpoint.
    Decipher(DecipherArgs),
    /// Score a predicted pairs file against a gold table.
    Eval(EvalArgs),
    /// Run the gradient-check and flow-oracle suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (lost.txt, known.txt, gold.tsv, meta.txt).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    words: usize,
    #[arg(long, default_value_t = 20)]
    symbols: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the symbol substitution map (defaults to --seed).
    #[arg(long)]
    substitution_seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    insertion_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    deletion_rate: f64,
    /// Fraction of pairs left without a lost-side counterpart.
    #[arg(long, default_value_t = 0.0)]
    unpaired_lost: f64,
    /// Fraction of pairs left without a known-side counterpart.
    #[arg(long, default_value_t = 0.0)]
    unpaired_known: f64,
    /// Each lost symbol maps to two known symbols.
    #[arg(long)]
    syllabic: bool,
}

#[derive(Args)]
struct CommonIo {
    /// Lost-language word list, one word per line.
    #[arg(long)]
    lost: PathBuf,
    /// Known-language word list, one word per line.
    #[arg(long)]
    known: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Plain)]
    format: FormatArg,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    io: CommonIo,
    /// Gold pairs TSV, used only to report accuracy.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Output directory (pairs.tsv, report.json, report.txt, checkpoint.json).
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Cognate pairs to identify; default: half the lost vocabulary.
    #[arg(long)]
    cognates: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    capacity: Option<i64>,
    /// Constant demand instead of the default linear ramp.
    #[arg(long)]
    constant_demand: bool,
    /// Ramp start as a fraction of the target demand.
    #[arg(long)]
    ramp_start: Option<f64>,
    #[arg(long)]
    subset: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs for the dense first iteration; default: same as --epochs.
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Mixture-support cap per known word from the second iteration on.
    #[arg(long)]
    train_sources: Option<usize>,
    /// Drop mixture sources differing in length by more than this; 0 disables.
    #[arg(long)]
    length_window: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    universal: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Syllabic preset: two-step alignment regularizer, larger universal
    /// inventory.
    #[arg(long)]
    syllabic: bool,
    /// Skip the flow solver; pair each lost word with its cheapest candidate.
    #[arg(long)]
    no_flow: bool,
}

#[derive(Args)]
struct DecipherArgs {
    #[command(flatten)]
    io: CommonIo,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output pairs TSV.
    #[arg(long)]
    out: PathBuf,
    /// Assignment size; default: half the lost vocabulary.
    #[arg(long)]
    cognates: Option<u64>,
    #[arg(long, default_value_t = 5)]
    candidates: usize,
    #[arg(long, default_value_t = 1)]
    capacity: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted pairs TSV (lost, known, [weight]).
    #[arg(long)]
    pairs: PathBuf,
    /// Gold pairs TSV (lost, known).
    #[arg(long)]
    gold: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random tiny models for the gradient check.
    #[arg(long, default_value_t = 5)]
    models: usize,
    /// Random instances for the flow oracle.
    #[arg(long, default_value_t = 200)]
    instances: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let run = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Decipher(a) => run_decipher(a),
        Command::Eval(a) => run_eval(a),
        Command::Selftest(a) => run_selftest(a),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_synth(a: SynthArgs) -> Result<ExitCode> {
    let spec = SynthSpec {
        vocab_size: a.words,
        symbol_count: a.symbols,
        substitution_seed: a.substitution_seed.unwrap_or(a.seed),
        insertion_rate: a.insertion_rate,
        deletion_rate: a.deletion_rate,
        unpaired_lost: a.unpaired_lost,
        unpaired_known: a.unpaired_known,
        syllabic: a.syllabic,
    };
    let corpus = synthesize(&spec, a.seed)?;
    write_synth_corpus(&a.out, &corpus, &spec, a.seed)?;
    println!(
        "wrote {} lost / {} known words, {} gold pairs to {}",
        corpus.lost.len(),
        corpus.known.len(),
        corpus.gold.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text)
                .map_err(|e| neurodecipher::Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if a.syllabic {
        cfg.model = cfg.model.syllabic();
    }
    macro_rules! set {
        ($field:expr, $arg:expr) => {
            if let Some(v) = $arg {
                $field = v;
            }
        };
    }
    set!(cfg.iterations, a.iterations);
    if a.cognates.is_some() {
        cfg.cognates = a.cognates;
    }
    set!(cfg.gamma, a.gamma);
    set!(cfg.candidates, a.candidates);
    set!(cfg.known_capacity, a.capacity);
    set!(cfg.subset_fraction, a.subset);
    set!(cfg.restarts, a.restarts);
    set!(cfg.epochs, a.epochs);
    if a.warmup_epochs.is_some() {
        cfg.warmup_epochs = a.warmup_epochs;
    }
    set!(cfg.train_sources, a.train_sources);
    match a.length_window {
        Some(0) => cfg.length_window = None,
        Some(w) => cfg.length_window = Some(w),
        None => {}
    }
    set!(cfg.batch_size, a.batch_size);
    set!(cfg.learning_rate, a.learning_rate);
    set!(cfg.seed, a.seed);
    set!(cfg.model.embed_dim, a.embed_dim);
    set!(cfg.model.hidden, a.hidden);
    set!(cfg.model.universal, a.universal);
    set!(cfg.model.lambda, a.lambda);
    set!(cfg.model.sample_count, a.samples);
    if a.constant_demand {
        cfg.schedule = DemandSchedule::Constant;
    } else if let Some(start) = a.ramp_start {
        cfg.schedule = DemandSchedule::Ramp { start };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_outcome(
    out: &std::path::Path,
    outcome: &TrainOutcome,
    lost: &Vocabulary,
    lost_inv: &neurodecipher::corpus::SymbolInventory,
    known: &Vocabulary,
    known_inv: &neurodecipher::corpus::SymbolInventory,
    format: WordFormat,
    gold: Option<&neurodecipher::corpus::GoldTable>,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_pairs(
        &out.join("pairs.tsv"),
        &outcome.pairs,
        lost,
        lost_inv,
        known,
        known_inv,
        format,
    )?;
    save_checkpoint(
        &out.join("checkpoint.json"),
        &outcome.record.config.model,
        &outcome.params,
    )?;
    let eval = gold.map(|g| score(&outcome.pairs, g));
    report(&outcome.record, eval.as_ref(), &out.join("report.json"))?;
    if let Some(e) = &eval {
        println!("accuracy {:.4}  precision {:.4}", e.accuracy, e.precision);
    }
    println!(
        "wrote {} pairs to {}",
        outcome.pairs.len(),
        out.join("pairs.tsv").display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = load_config(&a)?;
    let format: WordFormat = a.io.format.into();
    let (lost, lost_inv, lstats) = load_vocabulary(&a.io.lost, format, Language::Lost)?;
    let (known, known_inv, kstats) = load_vocabulary(&a.io.known, format, Language::Known)?;
    for (name, s) in [("lost", lstats), ("known", kstats)] {
        if s.skipped_empty > 0 {
            eprintln!("warning: {name} list: skipped {} empty lines", s.skipped_empty);
        }
    }
    let gold = a
        .gold
        .as_ref()
        .map(|p| load_gold(p, &lost, &lost_inv, format, &known, &known_inv, format))
        .transpose()?;

    let outcome = if a.no_flow {
        train_no_flow(&lost, &known, &cfg)?
    } else {
        multi_restart(&lost, &known, &cfg, gold.as_ref())?
    };
    for w in &outcome.record.warnings {
        eprintln!("warning: {w}");
    }
    write_outcome(
        &a.out,
        &outcome,
        &lost,
        &lost_inv,
        &known,
        &known_inv,
        format,
        gold.as_ref(),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_decipher(a: DecipherArgs) -> Result<ExitCode> {
    let format: WordFormat = a.io.format.into();
    let (lost, lost_inv, _) = load_vocabulary(&a.io.lost, format, Language::Lost)?;
    let (known, known_inv, _) = load_vocabulary(&a.io.known, format, Language::Known)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let demand = a
        .cognates
        .unwrap_or(((lost.len() as f64) * 0.5).ceil() as u64)
        .max(1);
    let matrix = build_cost_matrix(
        &ckpt.params,
        &ckpt.config,
        &lost,
        &known,
        a.candidates,
        ckpt.config.sample_count,
        a.seed,
    );
    let network = FlowNetwork::from_cost_matrix(
        &matrix,
        known.len(),
        demand.min(lost.len() as u64),
        a.capacity,
    );
    let sol = solve_max(&network);
    if sol.flow < demand {
        eprintln!("warning: only {} of {demand} pairs assignable", sol.flow);
    }
    let state = FlowState::from_solution(lost.len(), known.len(), &sol);
    let pairs = extract_pairs(&state, Some(&matrix));
    write_pairs(&a.out, &pairs, &lost, &lost_inv, &known, &known_inv, format)?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_eval(a: EvalArgs) -> Result<ExitCode> {
    let r = score_tsv(&a.pairs, &a.gold)?;
    println!(
        "accuracy {:.4} ({}/{} gold lost words)",
        r.accuracy, r.correct_lost_words, r.gold_lost_words
    );
    println!(
        "precision {:.4} ({}/{} emitted pairs)",
        r.precision, r.correct_pairs, r.emitted_pairs
    );
    if r.degenerate {
        println!("note: no pairs emitted");
    }
    Ok(ExitCode::SUCCESS)
}

fn run_selftest(a: SelftestArgs) -> Result<ExitCode> {
    print!("gradient check ({} models)... ", a.models);
    match neurodecipher::selftest::check_gradients(a.models, 1e-3, a.seed) {
        Ok(()) => println!("ok"),
        Err(msg) => {
            println!("FAILED");
            eprintln!("{msg}");
            return Ok(ExitCode::from(1));
        }
    }
    print!("flow oracle ({} instances)... ", a.instances);
    match neurodecipher::selftest::check_flow(a.instances, a.seed) {
        Ok(()) => println!("ok"),
        Err(msg) => {
            println!("FAILED");
            eprintln!("{msg}");
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}
