//! Flat `key = value` run configuration.
//!
//! Resolution order is built-in defaults, then the config file, then
//! command-line overrides. The resolved view is written back out in the same
//! format, so a run can be repeated from its own output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ecpe::corpus::{SplitMode, DEFAULT_MAX_CLAUSES};
use ecpe::evaluation::{Averaging, DEFAULT_ETA, SWEEP_ETAS};
use ecpe::network::{Ablation, ModelConfig};
use ecpe::training::{Experiment, TrainConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: expected {expected}, got {value:?}")]
    Type {
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("cannot read config file {path}: {msg}")]
    Read { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eta: f64,
    pub sweep_etas: Vec<f64>,
    pub folds: usize,
    pub jobs: usize,
    pub min_count: usize,
    pub max_clauses: usize,
    pub averaging: Averaging,
    pub hard: bool,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eta: DEFAULT_ETA,
            sweep_etas: SWEEP_ETAS.to_vec(),
            folds: 10,
            jobs: 1,
            min_count: 1,
            max_clauses: DEFAULT_MAX_CLAUSES,
            averaging: Averaging::Micro,
            hard: false,
            corpus: None,
            embeddings: None,
            checkpoint: None,
            out: PathBuf::from("ecpe-out"),
        }
    }
}

fn typed<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Type {
        key: key.to_string(),
        expected,
        value: value.to_string(),
    })
}

fn list<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|v| typed(key, v.trim(), expected)).collect()
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

const INT: &str = "a non-negative integer";
const REAL: &str = "a number";
const BOOL: &str = "true or false";

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "d_e" => m.d_e = typed(key, v, INT)?,
            "kernel_sizes" => m.kernel_sizes = list(key, v, "a comma-separated list of integers")?,
            "d_c" => m.d_c = typed(key, v, INT)?,
            "d_h" => m.d_h = typed(key, v, INT)?,
            "d_z" => m.d_z = typed(key, v, INT)?,
            "epsilon" => m.epsilon = typed(key, v, REAL)?,
            "batch_size" => t.batch_size = typed(key, v, INT)?,
            "learning_rate" => t.learning_rate = typed(key, v, REAL)?,
            "lambda_l2" => t.lambda_l2 = typed(key, v, REAL)?,
            "beta_aux" => t.beta_aux = typed(key, v, REAL)?,
            "dropout_p" => t.dropout_p = typed(key, v, REAL)?,
            "epochs" => t.epochs = typed(key, v, INT)?,
            "seed" => t.seed = typed(key, v, INT)?,
            "use_position" => t.ablation.use_position = typed(key, v, BOOL)?,
            "use_aux" => t.ablation.use_aux = typed(key, v, BOOL)?,
            "split_mode" => t.split_mode = typed(key, v, "within-fold or standard")?,
            "dev_fraction" => t.dev_fraction = typed(key, v, REAL)?,
            "eta" => self.eta = typed(key, v, REAL)?,
            "sweep_etas" => self.sweep_etas = list(key, v, "a comma-separated list of numbers")?,
            "folds" => self.folds = typed(key, v, INT)?,
            "jobs" => self.jobs = typed(key, v, INT)?,
            "min_count" => self.min_count = typed(key, v, INT)?,
            "max_clauses" => self.max_clauses = typed(key, v, INT)?,
            "averaging" => self.averaging = typed(key, v, "micro or macro-doc")?,
            "hard" => self.hard = typed(key, v, BOOL)?,
            "corpus" => self.corpus = path(v),
            "embeddings" => self.embeddings = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "out" => self.out = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every non-blank, non-comment line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// The fully resolved configuration in loadable form.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("d_e", m.d_e.to_string());
        kv("kernel_sizes", join(&m.kernel_sizes));
        kv("d_c", m.d_c.to_string());
        kv("d_h", m.d_h.to_string());
        kv("d_z", m.d_z.to_string());
        kv("epsilon", format!("{:?}", m.epsilon));
        kv("batch_size", t.batch_size.to_string());
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv("lambda_l2", format!("{:?}", t.lambda_l2));
        kv("beta_aux", format!("{:?}", t.beta_aux));
        kv("dropout_p", format!("{:?}", t.dropout_p));
        kv("epochs", t.epochs.to_string());
        kv("seed", t.seed.to_string());
        kv("use_position", t.ablation.use_position.to_string());
        kv("use_aux", t.ablation.use_aux.to_string());
        kv("split_mode", t.split_mode.to_string());
        kv("dev_fraction", format!("{:?}", t.dev_fraction));
        kv("eta", format!("{:?}", self.eta));
        kv("sweep_etas", self.sweep_etas.iter().map(|e| format!("{e:?}")).collect::<Vec<_>>().join(","));
        kv("folds", self.folds.to_string());
        kv("jobs", self.jobs.to_string());
        kv("min_count", self.min_count.to_string());
        kv("max_clauses", self.max_clauses.to_string());
        kv("averaging", self.averaging.to_string());
        kv("hard", self.hard.to_string());
        kv("corpus", show_path(&self.corpus));
        kv("embeddings", show_path(&self.embeddings));
        kv("checkpoint", show_path(&self.checkpoint));
        kv("out", self.out.display().to_string());
        s
    }

    pub fn experiment(&self) -> Experiment {
        let mut train = self.train.clone();
        train.eta = self.eta;
        Experiment {
            model: self.model.clone(),
            train,
            min_count: self.min_count,
            embeddings: self.embeddings.clone(),
        }
    }

    pub fn ablation(&self) -> Ablation {
        self.train.ablation
    }

    pub fn split_mode(&self) -> SplitMode {
        self.train.split_mode
    }
}

/// Defaults, then the optional file, then `overrides` in order.
pub fn load_config(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = file {
        let text = fs::read_to_string(p).map_err(|e| ConfigError::Read {
            path: p.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}
