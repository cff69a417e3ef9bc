//! Clause-segmented documents and everything needed to feed them to the model.

mod batch;
mod embeddings;
mod folds;
mod synthetic;
mod vocab;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use batch::{batch, Batch};
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use folds::{make_folds, FoldSplit, SplitMode};
pub use synthetic::{gen_synthetic, SyntheticProfile};
pub use vocab::{build_vocab, Vocabulary, PAD, UNK};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_CLAUSES: usize = 75;

/// A document as read from disk: tokens are still strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub clauses: Vec<Vec<String>>,
    pub emotions: BTreeSet<usize>,
    pub causes: BTreeSet<usize>,
    /// `(emotion clause, cause clause)`, 0-based.
    pub pairs: BTreeSet<(usize, usize)>,
}

/// A document whose tokens have been mapped through a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDocument {
    pub doc_id: String,
    pub clauses: Vec<Vec<usize>>,
    pub emotions: BTreeSet<usize>,
    pub causes: BTreeSet<usize>,
    pub pairs: BTreeSet<(usize, usize)>,
}

impl EncodedDocument {
    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    clauses: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    causes: Option<Vec<usize>>,
    pairs: Vec<[usize; 2]>,
}

impl Document {
    /// Builds a document, deriving emotion/cause sets from `pairs` when they
    /// are not given explicitly.
    pub fn new(
        doc_id: impl Into<String>,
        clauses: Vec<Vec<String>>,
        emotions: Option<BTreeSet<usize>>,
        causes: Option<BTreeSet<usize>>,
        pairs: BTreeSet<(usize, usize)>,
    ) -> Self {
        let emotions = emotions.unwrap_or_else(|| pairs.iter().map(|p| p.0).collect());
        let causes = causes.unwrap_or_else(|| pairs.iter().map(|p| p.1).collect());
        Document {
            doc_id: doc_id.into(),
            clauses,
            emotions,
            causes,
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn validate(&self, max_clauses: usize) -> Result<()> {
        let bad = |msg: String| Error::Validation {
            doc_id: self.doc_id.clone(),
            msg,
        };
        let n = self.clauses.len();
        if n == 0 || n > max_clauses {
            return Err(bad(format!("{n} clauses, expected 1..={max_clauses}")));
        }
        if let Some(i) = self.clauses.iter().position(Vec::is_empty) {
            return Err(bad(format!("clause {i} has no tokens")));
        }
        for &i in self.emotions.iter().chain(&self.causes) {
            if i >= n {
                return Err(bad(format!("clause index {i} out of range for {n} clauses")));
            }
        }
        for &(e, c) in &self.pairs {
            if e >= n || c >= n {
                return Err(bad(format!("pair ({e}, {c}) out of range for {n} clauses")));
            }
            if !self.emotions.contains(&e) || !self.causes.contains(&c) {
                return Err(bad(format!("pair ({e}, {c}) not covered by the emotion/cause sets")));
            }
        }
        Ok(())
    }

    fn from_record(r: DocRecord) -> Self {
        Document::new(
            r.doc_id,
            r.clauses,
            r.emotions.map(|v| v.into_iter().collect()),
            r.causes.map(|v| v.into_iter().collect()),
            r.pairs.into_iter().map(|[e, c]| (e, c)).collect(),
        )
    }

    fn to_record(&self) -> DocRecord {
        DocRecord {
            doc_id: self.doc_id.clone(),
            clauses: self.clauses.clone(),
            emotions: Some(self.emotions.iter().copied().collect()),
            causes: Some(self.causes.iter().copied().collect()),
            pairs: self.pairs.iter().map(|&(e, c)| [e, c]).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("document serializes")
    }
}

/// Parses JSONL text, one document per non-blank line.
pub fn parse_corpus(text: &str, max_clauses: usize) -> Result<Vec<Document>> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())), max_clauses)
}

fn parse_lines(lines: impl Iterator<Item = Result<String>>, max_clauses: usize) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let doc = Document::from_record(record);
        doc.validate(max_clauses)?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    load_corpus_with(path, DEFAULT_MAX_CLAUSES)
}

pub fn load_corpus_with(path: &Path, max_clauses: usize) -> Result<Vec<Document>> {
    let reader = BufReader::new(File::open(path)?);
    parse_lines(reader.lines().map(|l| l.map_err(Error::from)), max_clauses)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        writeln!(w, "{}", d.to_json())?;
    }
    w.flush()?;
    Ok(())
}

/// Documents with exactly one gold pair.
pub fn hard_filter(docs: &[Document]) -> Vec<Document> {
    docs.iter().filter(|d| d.pairs.len() == 1).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG1: &str = r#"{"doc_id":"fig1","clauses":[["a","b"],["c"],["d","e"],["f"]],"pairs":[[3,1],[3,2]]}"#;

    #[test]
    fn parses_a_four_clause_document() {
        let docs = parse_corpus(FIG1, DEFAULT_MAX_CLAUSES).unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs[0];
        assert_eq!(d.emotions, BTreeSet::from([3]));
        assert_eq!(d.causes, BTreeSet::from([1, 2]));
        assert_eq!(d.pairs, BTreeSet::from([(3, 1), (3, 2)]));
    }

    #[test]
    fn empty_input_is_an_empty_corpus() {
        assert!(parse_corpus("", DEFAULT_MAX_CLAUSES).unwrap().is_empty());
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_corpus(f.path()).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_pair_is_a_validation_error() {
        let line = r#"{"doc_id":"x","clauses":[["a"],["b"],["c"],["d"]],"pairs":[[9,1]]}"#;
        match parse_corpus(line, DEFAULT_MAX_CLAUSES) {
            Err(Error::Validation { doc_id, .. }) => assert_eq!(doc_id, "x"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inconsistent_sets_are_rejected() {
        let line = r#"{"doc_id":"y","clauses":[["a"],["b"]],"emotions":[0],"causes":[0],"pairs":[[1,0]]}"#;
        assert!(matches!(parse_corpus(line, 75), Err(Error::Validation { .. })));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{FIG1}\n\n{{not json\n");
        match parse_corpus(&text, 75) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clause_limits_are_enforced() {
        let empty_clause = r#"{"doc_id":"z","clauses":[["a"],[]],"pairs":[]}"#;
        assert!(parse_corpus(empty_clause, 75).is_err());
        let long = parse_corpus(FIG1, 3);
        assert!(long.is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let docs = parse_corpus(FIG1, 75).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(f.path(), &docs).unwrap();
        assert_eq!(load_corpus(f.path()).unwrap(), docs);
    }

    #[test]
    fn hard_filter_keeps_single_pair_docs() {
        let mk = |id: &str, pairs: &[(usize, usize)]| {
            Document::new(id, vec![vec!["t".into()]; 4], None, None, pairs.iter().copied().collect())
        };
        let docs = vec![mk("a", &[(1, 0)]), mk("b", &[(1, 0), (3, 2)]), mk("c", &[(2, 2)])];
        let kept = hard_filter(&docs);
        assert_eq!(kept.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        assert_eq!(hard_filter(&kept), kept);
    }
}
