use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evaluation::TaskMetrics;

/// Bookkeeping for one epoch. Losses are means over the epoch's mini-batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub pair_loss: f64,
    pub aux_loss: f64,
    /// Wall-clock time; kept out of the JSONL so that log is reproducible.
    #[serde(skip)]
    pub seconds: f64,
    /// Loss logarithms that hit the lower clamp.
    pub clamp_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<TaskMetrics>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, when a dev split picked one.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// One JSON object per epoch. Contains no timing, so seeded runs produce
    /// identical bytes.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("serializable record"));
            out.push('\n');
        }
        out
    }

    /// `{"epoch": n, "seconds": s}` per line.
    pub fn timing_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            writeln!(out, "{}", serde_json::json!({"epoch": e.epoch, "seconds": e.seconds})).expect("string write");
        }
        out
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Runs `f` and returns its result with the elapsed wall-clock seconds.
#[cfg(not(target_arch = "wasm32"))]
pub fn time_epoch<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Browser builds have no monotonic clock in `std`; durations read as zero.
#[cfg(target_arch = "wasm32")]
pub fn time_epoch<T>(f: impl FnOnce() -> T) -> (T, f64) {
    (f(), 0.0)
}
