use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use acrm::data::{generate_synthetic, load_split, SynthConfig};
use acrm::encoders::EmbeddingTable;
use acrm::harness::{
    evaluate_checkpoint, gradcheck, predict_file, train_checkpoint, Checkpoint, ModelConfig, Precision, PredictOptions,
};
use acrm::interaction::{InteractionKind, Normalization};
use acrm::{Acrm, Error, Result};

#[derive(Parser)]
#[command(
    name = "acrm",
    version,
    about = "Moment retrieval with attentive cross-modal relevance matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an annotation file.
    Eval(EvalArgs),
    /// Write per-instance predictions as JSON lines.
    Infer(InferArgs),
    /// Generate a synthetic dataset with planted moments.
    Synth(SynthArgs),
    /// Finite-difference check of the full loss for every model variant.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML model configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Word vectors (`word v1 ... vN` per line); random when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Per-epoch JSON-lines log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Fail on malformed annotation lines instead of skipping them.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    attention_dim: Option<usize>,
    #[arg(long)]
    predictor_hidden: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    normalization: Option<Normalization>,
    #[arg(long)]
    interaction: Option<InteractionKind>,
    /// Mean-pool the query instead of attending.
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    tied_lstm: bool,
    #[arg(long)]
    strict_mean: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("expected f32 or f64, got {s:?}")),
    }
}

impl Overrides {
    fn apply(&self, mut c: ModelConfig) -> ModelConfig {
        macro_rules! set {
            ($($f:ident),+) => { $(if let Some(v) = self.$f { c.$f = v; })+ };
        }
        set!(
            d,
            predictor_hidden,
            embed_dim,
            normalization,
            interaction,
            lambda,
            lr,
            batch_size,
            dropout,
            max_epochs,
            patience,
            seed,
            precision
        );
        if self.attention_dim.is_some() {
            c.attention_dim = self.attention_dim;
        }
        if self.no_attention {
            c.attention = false;
        }
        if self.tied_lstm {
            c.tied_lstm = true;
        }
        if self.strict_mean {
            c.strict_mean = true;
        }
        c
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
    iou: Vec<f64>,
    /// Recall is reported for every n from 1 to this value.
    #[arg(long, default_value_t = 1)]
    topk: usize,
    /// EvalReport JSON destination; defaults to `<checkpoint>.eval.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Include per-frame logits and probabilities of all three heads.
    #[arg(long)]
    dump_scores: bool,
    /// Include frame-by-word attention weights.
    #[arg(long)]
    dump_attention: bool,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Total instances; the last `--eval-num` of them form eval.jsonl.
    #[arg(long, default_value_t = 600)]
    num: usize,
    #[arg(long, default_value_t = 100)]
    eval_num: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    t_min: usize,
    #[arg(long, default_value_t = 50)]
    t_max: usize,
    #[arg(long, default_value_t = 16)]
    d_in: usize,
    #[arg(long, default_value_t = 8)]
    signal_words: usize,
    #[arg(long, default_value_t = 40)]
    filler_words: usize,
    #[arg(long, default_value_t = 4)]
    moment_min: usize,
    #[arg(long, default_value_t = 12)]
    moment_max: usize,
    #[arg(long, default_value_t = 3)]
    query_min: usize,
    #[arg(long, default_value_t = 8)]
    query_max: usize,
    #[arg(long, default_value_t = 2.0)]
    signal: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 300)]
    embed_dim: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => ModelConfig::from_toml_file(p)?,
        None => ModelConfig::default(),
    };
    let cfg = a.overrides.apply(base.with_env_seed()?);
    cfg.validate()?;
    log::info!("config:\n{}", cfg.to_toml());

    let (train_split, stats) = load_split(&a.train, &a.features, None, None, a.strict)?;
    log::info!(
        "train: {} instances, {} rejected, {} clamped",
        train_split.len(),
        stats.rejected(),
        stats.clamped_times
    );
    let (eval_split, stats) = load_split(
        &a.eval,
        &a.features,
        Some(&train_split.vocab),
        Some(train_split.d_in),
        a.strict,
    )?;
    log::info!(
        "eval: {} instances, {} rejected, {} clamped",
        eval_split.len(),
        stats.rejected(),
        stats.clamped_times
    );
    if train_split.is_empty() || eval_split.is_empty() {
        return Err(Error::Data("train and eval splits must both contain instances".into()));
    }
    let table = match &a.embeddings {
        Some(p) => EmbeddingTable::load(p, &train_split.vocab, cfg.embed_dim, cfg.seed)?,
        None => EmbeddingTable::random(&train_split.vocab, cfg.embed_dim, cfg.seed)?,
    };
    let model = Acrm::new(&cfg, train_split.d_in)?;

    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl"));
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log_file = BufWriter::new(file);
    let mut io_err = None;
    let header =
        json!({ "config": cfg, "d_in": train_split.d_in, "train": train_split.len(), "eval": eval_split.len() });
    writeln!(log_file, "{header}").map_err(|e| Error::io(&log_path, e))?;
    let started = Instant::now();
    let run = train_checkpoint(&model, &table, &train_split.instances, &eval_split.instances, |rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }
    run.checkpoint.save(&a.out)?;
    println!(
        "best epoch {} of {} ({:.1}s); checkpoint {}",
        run.checkpoint.epoch,
        run.log.len(),
        started.elapsed().as_secs_f64(),
        a.out.display()
    );
    print!("{}", run.report.table());
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (split, stats) = load_split(&a.ann, &a.features, Some(ckpt.table.vocab()), Some(ckpt.d_in), false)?;
    if stats.rejected() > 0 {
        log::warn!("{} records rejected", stats.rejected());
    }
    let n_list: Vec<usize> = (1..=a.topk.max(1)).collect();
    let report = evaluate_checkpoint(&ckpt, &split.instances, &n_list, &a.iou, a.batch_size)?;
    print!("{}", report.table());
    let path = a.report.unwrap_or_else(|| with_suffix(&a.checkpoint, ".eval.json"));
    write_json(&path, &report)
}

fn run_infer(a: InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let opts = PredictOptions {
        dump_scores: a.dump_scores,
        dump_attention: a.dump_attention,
        batch_size: a.batch_size,
    };
    let s = predict_file(&ckpt, &a.ann, &a.features, &a.out, opts)?;
    println!(
        "{} predictions, {} error records, {} unreadable lines",
        s.predicted, s.failed, s.skipped_lines
    );
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_instances: a.num,
        eval_instances: a.eval_num,
        t_min: a.t_min,
        t_max: a.t_max,
        d_in: a.d_in,
        signal_words: a.signal_words,
        filler_words: a.filler_words,
        moment_min: a.moment_min,
        moment_max: a.moment_max,
        query_min: a.query_min,
        query_max: a.query_max,
        signal: a.signal,
        noise_std: a.noise,
        embed_dim: a.embed_dim,
        seed: a.seed,
    };
    let ds = generate_synthetic(&cfg)?;
    ds.write(&a.out)?;
    println!(
        "wrote {} train and {} eval instances to {}",
        ds.train.len(),
        ds.eval.len(),
        a.out.display()
    );
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<bool> {
    let mut ok = true;
    for (name, cfg) in gradcheck::variants() {
        let started = Instant::now();
        let r = gradcheck::check_variant(&name, &cfg, a.trials, a.seed)?;
        ok &= r.passed();
        println!(
            "{:<10} {} trials  {} coordinates  max rel error {:.3e}  {}  ({:.1}s)",
            r.variant,
            r.trials,
            r.coordinates,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAILED" },
            started.elapsed().as_secs_f64()
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Infer(a) => run_infer(a),
        Command::Synth(a) => run_synth(a),
        Command::Gradcheck(a) => match run_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
