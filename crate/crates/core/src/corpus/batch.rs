use std::collections::BTreeSet;

use super::vocab::{Vocabulary, PAD};
use super::{Document, EncodedDocument};
use crate::error::{Error, Result};

/// Padded `[B × C_max × L_max]` view of a group of documents.
///
/// All masks and labels are stored flat in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub doc_ids: Vec<String>,
    pub max_clauses: usize,
    pub max_tokens: usize,
    pub tokens: Vec<usize>,
    pub clause_mask: Vec<f64>,
    pub token_mask: Vec<f64>,
    pub emotion_labels: Vec<f64>,
    pub cause_labels: Vec<f64>,
    /// `Y[b][p][q] = 1` iff `(p, q)` is a gold pair of document `b`.
    pub pair_labels: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn from_encoded(docs: &[EncodedDocument]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Degenerate("batch of zero documents"));
        }
        let c_max = docs.iter().map(EncodedDocument::len).max().unwrap_or(0);
        let l_max = docs.iter().flat_map(|d| d.clauses.iter().map(Vec::len)).max().unwrap_or(0);
        let b = docs.len();
        let mut out = Batch {
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            max_clauses: c_max,
            max_tokens: l_max,
            tokens: vec![PAD; b * c_max * l_max],
            clause_mask: vec![0.0; b * c_max],
            token_mask: vec![0.0; b * c_max * l_max],
            emotion_labels: vec![0.0; b * c_max],
            cause_labels: vec![0.0; b * c_max],
            pair_labels: vec![0.0; b * c_max * c_max],
            lengths: docs.iter().map(EncodedDocument::len).collect(),
        };
        for (bi, d) in docs.iter().enumerate() {
            for (ci, clause) in d.clauses.iter().enumerate() {
                let row = bi * c_max + ci;
                out.clause_mask[row] = 1.0;
                for (ti, &tok) in clause.iter().enumerate() {
                    out.tokens[row * l_max + ti] = tok;
                    out.token_mask[row * l_max + ti] = 1.0;
                }
            }
            for &e in &d.emotions {
                out.emotion_labels[bi * c_max + e] = 1.0;
            }
            for &c in &d.causes {
                out.cause_labels[bi * c_max + c] = 1.0;
            }
            for &(p, q) in &d.pairs {
                out.pair_labels[(bi * c_max + p) * c_max + q] = 1.0;
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Real (unmasked) token ids of clause `c` in document `b`.
    pub fn clause_tokens(&self, b: usize, c: usize) -> &[usize] {
        let row = b * self.max_clauses + c;
        let start = row * self.max_tokens;
        let n = self.token_mask[start..start + self.max_tokens]
            .iter()
            .take_while(|&&m| m == 1.0)
            .count();
        &self.tokens[start..start + n]
    }

    /// All real clauses of document `b`.
    pub fn document_clauses(&self, b: usize) -> Vec<&[usize]> {
        (0..self.lengths[b]).map(|c| self.clause_tokens(b, c)).collect()
    }

    /// `C × C` gold indicator restricted to document `b`'s true length.
    pub fn pair_target(&self, b: usize) -> Vec<f64> {
        let (n, m) = (self.lengths[b], self.max_clauses);
        let mut y = Vec::with_capacity(n * n);
        for p in 0..n {
            let start = (b * m + p) * m;
            y.extend_from_slice(&self.pair_labels[start..start + n]);
        }
        y
    }

    pub fn emotion_target(&self, b: usize) -> &[f64] {
        let m = self.max_clauses;
        &self.emotion_labels[b * m..b * m + self.lengths[b]]
    }

    pub fn cause_target(&self, b: usize) -> &[f64] {
        let m = self.max_clauses;
        &self.cause_labels[b * m..b * m + self.lengths[b]]
    }

    /// Recovers per-document structure from the padded arrays and masks.
    pub fn unbatch(&self) -> Vec<EncodedDocument> {
        let m = self.max_clauses;
        (0..self.len())
            .map(|b| {
                let n = self.clause_mask[b * m..(b + 1) * m].iter().filter(|&&v| v == 1.0).count();
                let ones = |labels: &[f64]| -> BTreeSet<usize> {
                    (0..n).filter(|&i| labels[b * m + i] == 1.0).collect()
                };
                let mut pairs = BTreeSet::new();
                for p in 0..n {
                    for q in 0..n {
                        if self.pair_labels[(b * m + p) * m + q] == 1.0 {
                            pairs.insert((p, q));
                        }
                    }
                }
                EncodedDocument {
                    doc_id: self.doc_ids[b].clone(),
                    clauses: (0..n).map(|c| self.clause_tokens(b, c).to_vec()).collect(),
                    emotions: ones(&self.emotion_labels),
                    causes: ones(&self.cause_labels),
                    pairs,
                }
            })
            .collect()
    }
}

/// Encodes `docs` with `vocab` and pads them into one batch.
pub fn batch(docs: &[Document], vocab: &Vocabulary) -> Result<Batch> {
    let encoded: Vec<EncodedDocument> = docs.iter().map(|d| vocab.encode(d)).collect();
    Batch::from_encoded(&encoded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn doc(id: &str, n: usize, pairs: &[(usize, usize)]) -> Document {
        let clauses = (0..n).map(|i| vec![format!("t{i}"); i + 1]).collect();
        Document::new(id, clauses, None, None, pairs.iter().copied().collect())
    }

    #[test]
    fn single_document_indicator() {
        let docs = [doc("a", 2, &[(1, 0)])];
        let b = batch(&docs, &build_vocab(&docs, 1)).unwrap();
        assert_eq!(b.pair_labels, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn clause_masks_pad_shorter_documents() {
        let docs = [doc("a", 2, &[(1, 0)]), doc("b", 3, &[(2, 1), (2, 2)])];
        let b = batch(&docs, &build_vocab(&docs, 1)).unwrap();
        assert_eq!(b.clause_mask, vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.pair_labels.iter().sum::<f64>(), 3.0);
        // padded clause carries PAD ids and no labels
        assert!(b.tokens[2 * 3..3 * 3].iter().all(|&t| t == PAD));
        assert_eq!(b.emotion_labels[2], 0.0);
        assert!(b.pair_labels[..9].iter().skip(6).all(|&y| y == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let v = Vocabulary::from_tokens([]);
        assert!(batch(&[], &v).is_err());
    }

    #[test]
    fn unbatch_round_trips() {
        let docs = [doc("a", 2, &[(1, 0)]), doc("b", 4, &[(3, 1), (3, 2)]), doc("c", 1, &[(0, 0)])];
        let v = build_vocab(&docs, 1);
        let b = batch(&docs, &v).unwrap();
        let expect: Vec<EncodedDocument> = docs.iter().map(|d| v.encode(d)).collect();
        assert_eq!(b.unbatch(), expect);
        assert_eq!(b.pair_target(1).iter().sum::<f64>(), 2.0);
    }
}
