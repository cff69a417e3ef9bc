//! `ecpe` command-line runner.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ecpe::corpus::{gen_synthetic, hard_filter, load_corpus_with, make_folds, write_corpus, Document, SyntheticProfile};
use ecpe::evaluation::{
    cross_validate, evaluate_scores, score_corpus, sweep_csv, threshold_sweep, PredictionSet,
};
use ecpe::network::{Ablation, Checkpoint};
use ecpe::training::fit;

pub use config::{load_config, ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "ecpe", version, about = "Emotion-cause pair extraction: train, evaluate and inspect models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its checkpoint and training log.
    Train(RunArgs),
    /// k-fold cross-validation; writes per-fold and mean metrics.
    Xval(RunArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(RunArgs),
    /// Write extracted pairs, emotions and causes per document.
    Predict(RunArgs),
    /// Pair metrics over a list of decoding thresholds.
    Sweep(RunArgs),
    /// Generate a synthetic labelled corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labelled corpus, one JSON document per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Pretrained vectors in word2vec text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Comma-separated thresholds for `sweep`.
    #[arg(long)]
    pub etas: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Worker threads for cross-validation folds.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Keep only documents with exactly one gold pair.
    #[arg(long)]
    pub hard: bool,
    /// Disable position weighting of pair scores.
    #[arg(long)]
    pub no_position: bool,
    /// Disable the auxiliary emotion/cause loss.
    #[arg(long)]
    pub no_aux: bool,
    /// Any other config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus file to write.
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut o = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("corpus", show(&self.corpus));
        push("embeddings", show(&self.embeddings));
        push("checkpoint", show(&self.checkpoint));
        push("out", show(&self.out));
        push("seed", self.seed.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("eta", self.eta.map(|v| v.to_string()));
        push("sweep_etas", self.etas.clone());
        push("folds", self.folds.map(|v| v.to_string()));
        push("jobs", self.jobs.map(|v| v.to_string()));
        push("hard", self.hard.then(|| "true".into()));
        push("use_position", self.no_position.then(|| "false".into()));
        push("use_aux", self.no_aux.then(|| "false".into()));
        Ok(o)
    }

    fn resolve(&self) -> Result<RunConfig> {
        Ok(load_config(self.config.as_deref(), &self.overrides()?)?)
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join("config.resolved"), cfg.to_text())?;
    Ok(())
}

fn corpus(cfg: &RunConfig) -> Result<Vec<Document>> {
    let path = cfg.corpus.as_ref().context("missing required --corpus")?;
    let docs = load_corpus_with(path, cfg.max_clauses).with_context(|| format!("reading {}", path.display()))?;
    let docs = if cfg.hard { hard_filter(&docs) } else { docs };
    if docs.is_empty() {
        bail!("corpus {} has no usable documents", path.display());
    }
    Ok(docs)
}

fn checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.checkpoint.as_ref().context("missing required --checkpoint")?;
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// A switch can only turn off what the checkpoint was trained with.
fn eval_ablation(ck: &Checkpoint, cfg: &RunConfig) -> Ablation {
    Ablation {
        use_position: ck.ablation.use_position && cfg.ablation().use_position,
        use_aux: ck.ablation.use_aux && cfg.ablation().use_aux,
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let docs = corpus(cfg)?;
    prepare_out(cfg)?;
    let fitted = fit(&docs, &cfg.experiment())?;
    fitted.checkpoint.save(&cfg.out.join("checkpoint.bin"))?;
    fs::write(cfg.out.join("trainlog.jsonl"), fitted.log.to_jsonl())?;
    fs::write(cfg.out.join("timing.jsonl"), fitted.log.timing_jsonl())?;
    let last = fitted.log.final_loss().unwrap_or(0.0);
    println!(
        "trained on {} documents for {} epochs (final loss {last:.4}); outputs in {}",
        docs.len() - fitted.dev_ids.len(),
        fitted.log.epochs.len(),
        cfg.out.display()
    );
    Ok(())
}

fn xval(cfg: &RunConfig) -> Result<()> {
    let docs = corpus(cfg)?;
    prepare_out(cfg)?;
    let split = make_folds(&docs, cfg.folds, cfg.train.seed, cfg.split_mode())?;
    let cv = cross_validate(&docs, &split, &cfg.experiment(), cfg.jobs)?;
    write_json(&cfg.out.join("metrics.json"), &cv)?;
    for f in &cv.folds {
        println!("fold {}: pair F1 {:.4}", f.fold, f.metrics.pair.f1);
    }
    let m = &cv.mean.pair;
    println!("mean pair P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    Ok(())
}

fn scored(cfg: &RunConfig) -> Result<(Vec<Document>, Checkpoint, Vec<ecpe::network::DocumentScores>)> {
    let docs = corpus(cfg)?;
    let ck = checkpoint(cfg)?;
    let encoded: Vec<_> = docs.iter().map(|d| ck.vocab.encode(d)).collect();
    let scores = score_corpus(&ck.params, &encoded, eval_ablation(&ck, cfg))?;
    Ok((docs, ck, scores))
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let (docs, _, scores) = scored(cfg)?;
    prepare_out(cfg)?;
    let gold: Vec<PredictionSet> = docs.iter().map(PredictionSet::from).collect();
    let metrics = evaluate_scores(&scores, &gold, cfg.eta, cfg.averaging)?;
    write_json(&cfg.out.join("metrics.json"), &metrics)?;
    for (task, m) in [("emotion", metrics.emotion), ("cause", metrics.cause), ("pair", metrics.pair)] {
        println!("{task:<8} P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    }
    Ok(())
}

fn predict(cfg: &RunConfig) -> Result<()> {
    let (_, _, scores) = scored(cfg)?;
    prepare_out(cfg)?;
    let mut out = String::new();
    for s in &scores {
        out.push_str(&serde_json::to_string(&ecpe::evaluation::decode(s, cfg.eta))?);
        out.push('\n');
    }
    fs::write(cfg.out.join("predictions.jsonl"), out)?;
    println!("wrote predictions for {} documents", scores.len());
    Ok(())
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let (docs, _, scores) = scored(cfg)?;
    prepare_out(cfg)?;
    let gold: Vec<PredictionSet> = docs.iter().map(PredictionSet::from).collect();
    let rows = threshold_sweep(&scores, &gold, &cfg.sweep_etas)?;
    let csv = sweep_csv(&rows);
    fs::write(cfg.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let docs = gen_synthetic(args.n, args.seed, &SyntheticProfile::default());
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_corpus(&args.out, &docs)?;
    println!("wrote {} documents to {}", docs.len(), args.out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(&a.resolve()?),
        Command::Xval(a) => xval(&a.resolve()?),
        Command::Eval(a) => eval(&a.resolve()?),
        Command::Predict(a) => predict(&a.resolve()?),
        Command::Sweep(a) => sweep(&a.resolve()?),
    }
}

/// Parses `argv` (program name first) and runs it; returns the exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
