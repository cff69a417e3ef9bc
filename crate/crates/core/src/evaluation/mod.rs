//! Threshold decoding, P/R/F1 for the three tasks, sweeps and cross-validation.

mod crossval;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use crate::corpus::hard_filter;
pub use crate::training::time_epoch;
pub use crossval::{cross_validate, CrossValidation, FoldResult};
pub use metrics::{f1_score, prf1, Averaging, Metrics};

use crate::autodiff::Tensor;
use crate::corpus::{Document, EncodedDocument, Vocabulary};
use crate::error::{Error, Result};
use crate::network::{score_document, Ablation, DocumentScores, ParameterSet};

pub const DEFAULT_ETA: f64 = 0.3;

/// The threshold grid of the sweep experiment.
pub const SWEEP_ETAS: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];

/// Extracted (or gold) items of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub doc_id: String,
    /// `(emotion clause, cause clause)`.
    pub pairs: BTreeSet<(usize, usize)>,
    pub emotions: BTreeSet<usize>,
    pub causes: BTreeSet<usize>,
}

impl From<&Document> for PredictionSet {
    fn from(d: &Document) -> Self {
        PredictionSet {
            doc_id: d.doc_id.clone(),
            pairs: d.pairs.clone(),
            emotions: d.emotions.clone(),
            causes: d.causes.clone(),
        }
    }
}

impl From<&EncodedDocument> for PredictionSet {
    fn from(d: &EncodedDocument) -> Self {
        PredictionSet {
            doc_id: d.doc_id.clone(),
            pairs: d.pairs.clone(),
            emotions: d.emotions.clone(),
            causes: d.causes.clone(),
        }
    }
}

/// Scores for the emotion, cause and pair tasks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub emotion: Metrics,
    pub cause: Metrics,
    pub pair: Metrics,
}

impl TaskMetrics {
    pub fn mean(items: &[TaskMetrics]) -> TaskMetrics {
        let pick = |f: fn(&TaskMetrics) -> Metrics| Metrics::mean(&items.iter().map(f).collect::<Vec<_>>());
        TaskMetrics {
            emotion: pick(|t| t.emotion),
            cause: pick(|t| t.cause),
            pair: pick(|t| t.pair),
        }
    }
}

/// Pairs `(p, q)` with `scores[p][q] > eta`, restricted to the first
/// `clauses` rows and columns.
pub fn decode_pairs(scores: &Tensor, eta: f64, clauses: usize) -> BTreeSet<(usize, usize)> {
    let width = scores.cols();
    let n = clauses.min(scores.rows()).min(width);
    let data = scores.data();
    let mut out = BTreeSet::new();
    for p in 0..n {
        for q in 0..n {
            if data[p * width + q] > eta {
                out.insert((p, q));
            }
        }
    }
    out
}

/// Clauses whose positive-class probability exceeds one half.
pub fn decode_aux(probs: &Tensor) -> BTreeSet<usize> {
    (0..probs.rows()).filter(|&i| probs.at(i, 1) > 0.5).collect()
}

pub fn decode(scores: &DocumentScores, eta: f64) -> PredictionSet {
    PredictionSet {
        doc_id: scores.doc_id.clone(),
        pairs: decode_pairs(&scores.pair_scores, eta, scores.pair_scores.rows()),
        emotions: decode_aux(&scores.aux_emotion),
        causes: decode_aux(&scores.aux_cause),
    }
}

/// Eval-mode scores for every document.
pub fn score_corpus(params: &ParameterSet, docs: &[EncodedDocument], ablation: Ablation) -> Result<Vec<DocumentScores>> {
    docs.iter()
        .map(|d| {
            let refs: Vec<&[usize]> = d.clauses.iter().map(Vec::as_slice).collect();
            score_document(params, &d.doc_id, &refs, ablation)
        })
        .collect()
}

fn keyed<T: Ord + Clone>(sets: &[PredictionSet], f: impl Fn(&PredictionSet) -> &BTreeSet<T>) -> Result<BTreeMap<String, BTreeSet<T>>> {
    let mut out = BTreeMap::new();
    for s in sets {
        if out.insert(s.doc_id.clone(), f(s).clone()).is_some() {
            return Err(Error::Contract(format!("duplicate document id {}", s.doc_id)));
        }
    }
    Ok(out)
}

/// P/R/F1 of predictions against gold for all three tasks.
pub fn score_predictions(predicted: &[PredictionSet], gold: &[PredictionSet], averaging: Averaging) -> Result<TaskMetrics> {
    Ok(TaskMetrics {
        emotion: prf1(&keyed(predicted, |s| &s.emotions)?, &keyed(gold, |s| &s.emotions)?, averaging)?,
        cause: prf1(&keyed(predicted, |s| &s.causes)?, &keyed(gold, |s| &s.causes)?, averaging)?,
        pair: prf1(&keyed(predicted, |s| &s.pairs)?, &keyed(gold, |s| &s.pairs)?, averaging)?,
    })
}

pub fn evaluate_scores(scores: &[DocumentScores], gold: &[PredictionSet], eta: f64, averaging: Averaging) -> Result<TaskMetrics> {
    let predicted: Vec<PredictionSet> = scores.iter().map(|s| decode(s, eta)).collect();
    score_predictions(&predicted, gold, averaging)
}

pub fn evaluate_encoded(params: &ParameterSet, docs: &[EncodedDocument], eta: f64, ablation: Ablation) -> Result<TaskMetrics> {
    let scores = score_corpus(params, docs, ablation)?;
    let gold: Vec<PredictionSet> = docs.iter().map(PredictionSet::from).collect();
    evaluate_scores(&scores, &gold, eta, Averaging::Micro)
}

/// Eval-mode forward, decode and micro-averaged scoring of `docs`.
pub fn evaluate(params: &ParameterSet, vocab: &Vocabulary, docs: &[Document], eta: f64, ablation: Ablation) -> Result<TaskMetrics> {
    let encoded: Vec<EncodedDocument> = docs.iter().map(|d| vocab.encode(d)).collect();
    evaluate_encoded(params, &encoded, eta, ablation)
}

pub fn predict(params: &ParameterSet, vocab: &Vocabulary, docs: &[Document], eta: f64, ablation: Ablation) -> Result<Vec<PredictionSet>> {
    let encoded: Vec<EncodedDocument> = docs.iter().map(|d| vocab.encode(d)).collect();
    Ok(score_corpus(params, &encoded, ablation)?.iter().map(|s| decode(s, eta)).collect())
}

/// One row of a threshold sweep; `metrics` are for the pair task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub metrics: Metrics,
}

/// Pair metrics at each threshold, decoding the same cached scores.
pub fn threshold_sweep(scores: &[DocumentScores], gold: &[PredictionSet], etas: &[f64]) -> Result<Vec<SweepRow>> {
    if etas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter(format!("thresholds must be strictly ascending: {etas:?}")));
    }
    let gold_pairs = keyed(gold, |s| &s.pairs)?;
    etas.iter()
        .map(|&eta| {
            let predicted: BTreeMap<String, BTreeSet<(usize, usize)>> = scores
                .iter()
                .map(|s| (s.doc_id.clone(), decode_pairs(&s.pair_scores, eta, s.pair_scores.rows())))
                .collect();
            Ok(SweepRow {
                eta,
                metrics: prf1(&predicted, &gold_pairs, Averaging::Micro)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("eta,precision,recall,f1\n");
    for r in rows {
        let m = &r.metrics;
        writeln!(out, "{},{},{},{}", r.eta, m.precision, m.recall, m.f1).expect("string write");
    }
    out
}
