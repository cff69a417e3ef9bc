use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Document;
use crate::error::{Error, Result};

/// How each fold is turned into a train/test pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Each fold's own documents are divided 90% train / 10% test.
    #[default]
    WithinFold,
    /// Classic k-fold: test on one fold, train on the remaining k−1.
    Standard,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::WithinFold => "within-fold",
            SplitMode::Standard => "standard",
        })
    }
}

impl FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "within-fold" => Ok(SplitMode::WithinFold),
            "standard" => Ok(SplitMode::Standard),
            _ => Err(format!("unknown split mode {s:?} (within-fold | standard)")),
        }
    }
}

/// Document indices per fold plus the derived train/test lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub mode: SplitMode,
    pub folds: Vec<Vec<usize>>,
    pub splits: Vec<(Vec<usize>, Vec<usize>)>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn select(docs: &[Document], idx: &[usize]) -> Vec<Document> {
        idx.iter().map(|&i| docs[i].clone()).collect()
    }
}

/// Seeded shuffle, then round-robin assignment of documents to `k` folds.
pub fn make_folds(docs: &[Document], k: usize, seed: u64, mode: SplitMode) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    if docs.len() < k {
        return Err(Error::Parameter(format!("{} documents cannot fill {k} folds", docs.len())));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, d) in order.into_iter().enumerate() {
        folds[i % k].push(d);
    }
    let splits = match mode {
        SplitMode::WithinFold => folds
            .iter()
            .map(|f| {
                if f.len() < 2 {
                    return Err(Error::Parameter(format!(
                        "fold of {} document(s) cannot be split into train and test",
                        f.len()
                    )));
                }
                let n_test = ((f.len() as f64 * 0.1).round() as usize).clamp(1, f.len() - 1);
                let cut = f.len() - n_test;
                Ok((f[..cut].to_vec(), f[cut..].to_vec()))
            })
            .collect::<Result<Vec<_>>>()?,
        SplitMode::Standard => (0..k)
            .map(|t| {
                let train = (0..k).filter(|&j| j != t).flat_map(|j| folds[j].iter().copied()).collect();
                (train, folds[t].clone())
            })
            .collect(),
    };
    Ok(FoldSplit { mode, folds, splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn docs(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("d{i}"), vec![vec!["t".into()]], None, None, BTreeSet::new()))
            .collect()
    }

    #[test]
    fn even_split_and_partition() {
        let corpus = docs(20);
        let s = make_folds(&corpus, 10, 3, SplitMode::WithinFold).unwrap();
        assert!(s.folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = s.folds.concat();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        for (f, (train, test)) in s.folds.iter().zip(&s.splits) {
            assert_eq!(train.len() + test.len(), f.len());
            assert!(train.iter().all(|i| !test.contains(i)));
        }
    }

    #[test]
    fn same_seed_same_split() {
        let corpus = docs(37);
        let a = make_folds(&corpus, 10, 11, SplitMode::Standard).unwrap();
        let b = make_folds(&corpus, 10, 11, SplitMode::Standard).unwrap();
        assert_eq!(a, b);
        let c = make_folds(&corpus, 10, 12, SplitMode::Standard).unwrap();
        assert_ne!(a.folds, c.folds);
    }

    #[test]
    fn within_fold_uses_ten_percent_test() {
        let s = make_folds(&docs(200), 2, 0, SplitMode::WithinFold).unwrap();
        for (train, test) in &s.splits {
            assert_eq!((train.len(), test.len()), (90, 10));
        }
    }

    #[test]
    fn standard_mode_tests_each_fold_once() {
        let s = make_folds(&docs(30), 3, 0, SplitMode::Standard).unwrap();
        for (t, (train, test)) in s.splits.iter().enumerate() {
            assert_eq!(test, &s.folds[t]);
            assert_eq!(train.len(), 20);
        }
    }

    #[test]
    fn too_few_documents() {
        assert!(make_folds(&docs(5), 10, 0, SplitMode::Standard).is_err());
        assert!(make_folds(&docs(10), 10, 0, SplitMode::WithinFold).is_err());
    }

    #[test]
    fn split_mode_parses() {
        assert_eq!("standard".parse::<SplitMode>().unwrap(), SplitMode::Standard);
        assert_eq!(SplitMode::WithinFold.to_string().parse::<SplitMode>().unwrap(), SplitMode::WithinFold);
        assert!("other".parse::<SplitMode>().is_err());
    }
}
