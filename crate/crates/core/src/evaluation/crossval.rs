use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::{evaluate, TaskMetrics};
use crate::corpus::{Document, FoldSplit};
use crate::error::{Error, Result};
use crate::training::{fit, Experiment};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: TaskMetrics,
    pub mean_epoch_seconds: f64,
    pub train_docs: usize,
    pub test_docs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    /// Unweighted mean over folds (counts are summed).
    pub mean: TaskMetrics,
}

fn run_fold(docs: &[Document], split: &FoldSplit, exp: &Experiment, fold: usize) -> Result<FoldResult> {
    let (train_idx, test_idx) = &split.splits[fold];
    let train = FoldSplit::select(docs, train_idx);
    let test = FoldSplit::select(docs, test_idx);
    let mut exp = exp.clone();
    exp.train.seed = exp.train.seed.wrapping_add(fold as u64);
    let fitted = fit(&train, &exp)?;
    let ck = &fitted.checkpoint;
    let metrics = evaluate(&ck.params, &ck.vocab, &test, exp.train.eta, ck.ablation)?;
    Ok(FoldResult {
        fold,
        metrics,
        mean_epoch_seconds: fitted.log.mean_epoch_seconds(),
        train_docs: train.len(),
        test_docs: test.len(),
    })
}

/// Trains and evaluates every fold of `split`, using up to `jobs` threads.
/// Fold `i` is seeded with `seed + i`, so results do not depend on `jobs`.
pub fn cross_validate(docs: &[Document], split: &FoldSplit, exp: &Experiment, jobs: usize) -> Result<CrossValidation> {
    let k = split.splits.len();
    if k == 0 {
        return Err(Error::Degenerate("cross-validation without folds"));
    }
    let results: Vec<Mutex<Option<Result<FoldResult>>>> = (0..k).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let fold = next.fetch_add(1, Ordering::SeqCst);
        if fold >= k {
            break;
        }
        let r = run_fold(docs, split, exp, fold);
        *results[fold].lock().expect("fold slot") = Some(r);
    };
    let jobs = jobs.clamp(1, k);
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let mut folds = Vec::with_capacity(k);
    for (fold, slot) in results.into_iter().enumerate() {
        let r = slot.into_inner().expect("fold slot").expect("every fold ran");
        folds.push(r.map_err(|e| Error::Fold {
            fold,
            source: Box::new(e),
        })?);
    }
    let mean = TaskMetrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    Ok(CrossValidation { folds, mean })
}
