use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts and derived scores for one extraction task.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Metrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            tp,
            fp,
            fn_,
        }
    }

    /// Number of predicted items.
    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }

    /// Unweighted mean of the scores; counts are summed.
    pub fn mean(items: &[Metrics]) -> Metrics {
        if items.is_empty() {
            return Metrics::default();
        }
        let n = items.len() as f64;
        Metrics {
            precision: items.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: items.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: items.iter().map(|m| m.f1).sum::<f64>() / n,
            tp: items.iter().map(|m| m.tp).sum(),
            fp: items.iter().map(|m| m.fp).sum(),
            fn_: items.iter().map(|m| m.fn_).sum(),
        }
    }
}

/// How per-document counts are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Pool counts over all documents, then compute P/R/F1.
    #[default]
    Micro,
    /// Compute P/R/F1 per document and average them.
    MacroDocument,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Micro => "micro",
            Averaging::MacroDocument => "macro-doc",
        })
    }
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro-doc" => Ok(Averaging::MacroDocument),
            _ => Err(Error::Parameter(format!("unknown averaging {s:?} (micro, macro-doc)"))),
        }
    }
}

/// Precision, recall and F1 of predicted against gold item sets, keyed by
/// document id. Both maps must cover the same documents.
pub fn prf1<T: Ord>(
    predicted: &BTreeMap<String, BTreeSet<T>>,
    gold: &BTreeMap<String, BTreeSet<T>>,
    averaging: Averaging,
) -> Result<Metrics> {
    if let Some(id) = predicted.keys().find(|k| !gold.contains_key(*k)) {
        return Err(Error::Contract(format!("prediction for unknown document {id}")));
    }
    if let Some(id) = gold.keys().find(|k| !predicted.contains_key(*k)) {
        return Err(Error::Contract(format!("no prediction for document {id}")));
    }
    let per_doc: Vec<Metrics> = gold
        .iter()
        .map(|(id, g)| {
            let p = &predicted[id];
            let tp = p.intersection(g).count();
            Metrics::from_counts(tp, p.len() - tp, g.len() - tp)
        })
        .collect();
    Ok(match averaging {
        Averaging::Micro => {
            let (tp, fp, fn_) = per_doc
                .iter()
                .fold((0, 0, 0), |(a, b, c), m| (a + m.tp, b + m.fp, c + m.fn_));
            Metrics::from_counts(tp, fp, fn_)
        }
        Averaging::MacroDocument => Metrics::mean(&per_doc),
    })
}
