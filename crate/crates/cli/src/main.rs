use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prodisc_core::config::{read_pairs, Configurable};
use prodisc_core::data::{generate_synthetic, read_bag, write_corpus};
use prodisc_core::evalkit::{dump_features, evaluate, score_bags, EvalOptions};
use prodisc_core::model::read_checkpoint;
use prodisc_core::trainer::{resume, train, Ablation};
use prodisc_core::{Corpus, Error, FeatureBag, SynthConfig, TrainConfig};

/// Anomaly scoring head for pre-extracted instance features.
#[derive(Parser)]
#[command(name = "prodisc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of feature bags plus a manifest.
    Synth(SynthArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Score a corpus split and report frame-level AUC.
    Eval(EvalArgs),
    /// Score every instance of one bag file.
    Score(ScoreArgs),
    /// Export enhanced instance features as CSV.
    DumpFeatures(DumpArgs),
}

/// `key = value` lines from `--config`, then `--set` overrides, then the
/// dedicated flags.
#[derive(Args)]
struct Overrides {
    /// Config file with one `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single config key, e.g. `--set lambda=2.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, target: &mut impl Configurable) -> Result<(), Error> {
        if let Some(path) = &self.config {
            target.apply_pairs(&read_pairs(path)?)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            target.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of anomalous instances in an abnormal bag, in (0, 0.5].
    #[arg(long)]
    rho: Option<f64>,
    /// Anomaly offset magnitude.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Corpus directory or manifest file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory for the checkpoint, log and config echo.
    #[arg(long)]
    out: Option<PathBuf>,
    /// baseline, pil, pide or full.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Continue from a checkpoint until `epochs` are complete in total.
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Model options that the checkpoint does not carry.
#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Must match the ablation the checkpoint was trained with.
    #[arg(long)]
    ablation: Option<Ablation>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = TrainConfig::default();
        self.overrides.apply(&mut cfg)?;
        if let Some(a) = self.ablation {
            cfg.ablation = a;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for report.json and per-bag score CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Split to evaluate; the whole corpus when it has no such split.
    #[arg(long, default_value = "test")]
    split: String,
    /// Centered moving-average window applied to scores before AUC.
    #[arg(long, default_value_t = 0)]
    smooth: usize,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bag: PathBuf,
    /// CSV destination; scores go to stdout one per line otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split to export; the whole corpus when it has no such split.
    #[arg(long, default_value = "test")]
    split: String,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Format { .. } => 1,
        Error::Config(_) | Error::Shape { .. } | Error::Empty(_) => 2,
        Error::UndefinedAuc { .. } | Error::MissingFrameLabels(_) => 3,
        Error::NonFinite(_) | Error::GradientCheck(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Score(a) => run_score(a),
        Command::DumpFeatures(a) => run_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run_synth(args: SynthArgs) -> Result<(), Error> {
    let mut cfg = SynthConfig::default();
    args.overrides.apply(&mut cfg)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(rho) = args.rho {
        cfg.rho = rho;
    }
    if let Some(delta) = args.delta {
        cfg.delta = delta;
    }
    // Anomalies are the minority inside an abnormal bag.
    if !(cfg.rho > 0.0 && cfg.rho <= 0.5) {
        return Err(Error::Config(format!("rho must lie in (0, 0.5], got {}", cfg.rho)));
    }
    let corpus = generate_synthetic(&cfg)?;
    let written = write_corpus(&corpus, &args.out)?;
    let count = |bags: &[FeatureBag], label: u8| bags.iter().filter(|b| b.bag_label() == label).count();
    let frames = |bags: &[FeatureBag]| bags.iter().map(|b| b.len()).sum::<usize>();
    println!(
        "train: {} normal, {} abnormal bags, {} instances",
        count(&corpus.train, 0),
        count(&corpus.train, 1),
        frames(&corpus.train)
    );
    println!(
        "test: {} normal, {} abnormal bags, {} instances",
        count(&corpus.test, 0),
        count(&corpus.test, 1),
        frames(&corpus.test)
    );
    println!("manifest: {}", written.manifest.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = TrainConfig::default();
    args.overrides.apply(&mut cfg)?;
    if args.corpus.is_some() {
        cfg.corpus_dir = args.corpus;
    }
    if args.out.is_some() {
        cfg.out_dir = args.out;
    }
    if let Some(a) = args.ablation {
        cfg.ablation = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let outcome = match &args.resume {
        Some(path) => resume(path, &cfg)?,
        None => train(&cfg)?,
    };
    let fmt = |auc: Option<f64>| auc.map_or("undefined".to_string(), |a| format!("{a:.4}"));
    if let Some(last) = outcome.epochs.last() {
        println!(
            "epoch {}: l_mil {:.4} l_pide {:.4} l_total {:.4}",
            last.epoch, last.l_mil, last.l_pide, last.l_total
        );
    }
    println!("train AUC: {}", fmt(outcome.train_auc));
    println!("test AUC: {}", fmt(outcome.test_auc));
    if let Some(out) = &cfg.out_dir {
        println!("checkpoint: {}", out.join("checkpoint.pdvh").display());
    }
    Ok(())
}

fn load_split(corpus: &Corpus, split: &str) -> Result<Vec<FeatureBag>, Error> {
    if corpus.has_split(split) {
        corpus.load(&corpus.split(split))
    } else {
        corpus.load_all()
    }
}

fn run_eval(args: EvalArgs) -> Result<(), Error> {
    let cfg = args.model.resolve()?;
    let corpus = Corpus::open(&args.corpus)?;
    let bags = load_split(&corpus, &args.split)?;
    let opts = EvalOptions {
        use_pil: cfg.ablation.uses_pil(),
        smoothing_window: args.smooth,
    };
    let report = evaluate(
        &args.checkpoint,
        &corpus,
        &bags,
        cfg.tau_p as f32,
        &opts,
        args.out.as_deref(),
    )?;
    // A closed pipe on stdout is not an evaluation failure.
    let _ = writeln!(std::io::stdout(), "{}", report.to_json());
    Ok(())
}

fn run_score(args: ScoreArgs) -> Result<(), Error> {
    let cfg = args.model.resolve()?;
    let params = read_checkpoint(&args.checkpoint)?.params.with_tau_p(cfg.tau_p as f32);
    let bag = read_bag(&args.bag)?;
    let scores = score_bags(&params, std::slice::from_ref(&bag), cfg.ablation.uses_pil())?
        .pop()
        .expect("one bag in, one bag out");
    match &args.out {
        Some(path) => {
            let mut text = String::from("instance_index,score\n");
            for (i, s) in scores.iter().enumerate() {
                text.push_str(&format!("{i},{s}\n"));
            }
            write_file(path, text.as_bytes())
        }
        None => {
            let mut out = std::io::stdout().lock();
            for s in &scores {
                writeln!(out, "{s}").map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?;
            }
            Ok(())
        }
    }
}

fn run_dump(args: DumpArgs) -> Result<(), Error> {
    let cfg = args.model.resolve()?;
    let params = read_checkpoint(&args.checkpoint)?.params.with_tau_p(cfg.tau_p as f32);
    let corpus = Corpus::open(&args.corpus)?;
    let bags = load_split(&corpus, &args.split)?;
    let mut buf = Vec::new();
    let rows = dump_features(&params, &bags, cfg.ablation.uses_pil(), &mut buf)?;
    write_file(&args.out, &buf)?;
    println!("{rows} rows written to {}", args.out.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}
