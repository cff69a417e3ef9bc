//! Synthetic corpora whose pair statistics follow the NEWS benchmark profile.
//!
//! Emotion clauses carry an `emo<k>` marker token and their linked cause
//! clauses the matching `cau<k>`, so the mapping is learnable from text while
//! counts, offsets and orientation follow the configured proportions.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Poisson};

use super::Document;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProfile {
    pub mean_clauses: f64,
    pub min_clauses: usize,
    pub max_clauses: usize,
    /// Share of documents holding exactly one pair.
    pub single_pair_fraction: f64,
    /// Among multi-pair documents, share holding three pairs instead of two.
    pub triple_pair_fraction: f64,
    /// Relative weights of offset buckets `0, 1, 2, >2`.
    pub offset_weights: [f64; 4],
    pub max_offset: usize,
    /// Probability that the cause precedes its emotion (for non-zero offsets).
    pub cause_first: f64,
    pub min_clause_tokens: usize,
    pub max_clause_tokens: usize,
    pub filler_words: usize,
    pub marker_kinds: usize,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            mean_clauses: 14.0,
            min_clauses: 3,
            max_clauses: 30,
            single_pair_fraction: 1746.0 / 2105.0,
            triple_pair_fraction: 0.1,
            offset_weights: [511.0, 1342.0, 224.0, 90.0],
            max_offset: 12,
            cause_first: 0.85,
            min_clause_tokens: 3,
            max_clause_tokens: 8,
            filler_words: 60,
            marker_kinds: 4,
        }
    }
}

impl SyntheticProfile {
    /// Offsets in the `>2` bucket are `3 + Geometric(1/2)`, mean ≈ 4.
    fn sample_offset<R: Rng>(&self, bucket: usize, rng: &mut R) -> usize {
        match bucket {
            0..=2 => bucket,
            _ => {
                let mut off = 3;
                while off < self.max_offset && rng.random_bool(0.5) {
                    off += 1;
                }
                off
            }
        }
    }
}

fn pair_count<R: Rng>(p: &SyntheticProfile, rng: &mut R) -> usize {
    if rng.random_bool(p.single_pair_fraction) {
        1
    } else if rng.random_bool(p.triple_pair_fraction) {
        3
    } else {
        2
    }
}

pub fn gen_synthetic(n_docs: usize, seed: u64, profile: &SyntheticProfile) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(profile.mean_clauses).expect("positive mean");
    let buckets = WeightedIndex::new(profile.offset_weights).expect("valid weights");
    let kinds = profile.marker_kinds.max(3);

    (0..n_docs)
        .map(|i| {
            let n_clauses = (poisson.sample(&mut rng) as usize).clamp(profile.min_clauses, profile.max_clauses);
            let n_pairs = pair_count(profile, &mut rng);
            let kinds_used = sample(&mut rng, kinds, n_pairs).into_vec();

            let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
            let mut taken = BTreeSet::new();
            for &kind in &kinds_used {
                // documents are at least 3 clauses long, so offsets 0..=2 always fit
                loop {
                    let off = profile.sample_offset(buckets.sample(&mut rng), &mut rng);
                    if off >= n_clauses {
                        continue;
                    }
                    let e = rng.random_range(0..n_clauses);
                    let c = if rng.random_bool(profile.cause_first) {
                        e.checked_sub(off)
                    } else {
                        Some(e + off).filter(|&c| c < n_clauses)
                    };
                    if let Some(c) = c {
                        if taken.insert((e, c)) {
                            pairs.push((e, c, kind));
                            break;
                        }
                    }
                }
            }

            let mut clauses: Vec<Vec<String>> = (0..n_clauses)
                .map(|_| {
                    let len = rng.random_range(profile.min_clause_tokens..=profile.max_clause_tokens);
                    (0..len)
                        .map(|_| format!("w{}", rng.random_range(0..profile.filler_words)))
                        .collect()
                })
                .collect();
            for &(e, c, kind) in &pairs {
                for (clause, marker) in [(e, format!("emo{kind}")), (c, format!("cau{kind}"))] {
                    let at = rng.random_range(0..=clauses[clause].len());
                    clauses[clause].insert(at, marker);
                }
            }

            Document::new(
                format!("synth-{seed}-{i:05}"),
                clauses,
                None,
                None,
                pairs.iter().map(|&(e, c, _)| (e, c)).collect(),
            )
        })
        .collect()
}
