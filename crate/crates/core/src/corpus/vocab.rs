use std::collections::HashMap;

use super::{Document, EncodedDocument};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Token ↔ id mapping. Ids 0 and 1 are reserved and never assigned to
/// corpus tokens, even ones spelled like the reserved display names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds from tokens listed in id order starting at 2.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocabulary {
            ids: HashMap::new(),
            tokens: vec!["<pad>".into(), "<unk>".into()],
        };
        for t in tokens {
            if !v.ids.contains_key(&t) {
                v.ids.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Corpus tokens in id order (reserved entries excluded).
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn encode(&self, doc: &Document) -> EncodedDocument {
        EncodedDocument {
            doc_id: doc.doc_id.clone(),
            clauses: doc
                .clauses
                .iter()
                .map(|c| c.iter().map(|t| self.id(t)).collect())
                .collect(),
            emotions: doc.emotions.clone(),
            causes: doc.causes.clone(),
            pairs: doc.pairs.clone(),
        }
    }
}

/// Frequency-ordered vocabulary; ties broken lexicographically.
pub fn build_vocab(docs: &[Document], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        for t in d.clauses.iter().flatten() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, n)| n >= min_count.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[&str]) -> Document {
        Document::new(
            "d",
            vec![tokens.iter().map(|s| s.to_string()).collect()],
            None,
            None,
            Default::default(),
        )
    }

    #[test]
    fn frequency_order() {
        let v = build_vocab(&[doc(&["a", "a", "b"])], 1);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn min_count_cutoff() {
        let v = build_vocab(&[doc(&["a", "a", "b"])], 2);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn ties_are_lexicographic_and_stable() {
        let docs = [doc(&["q", "b", "z", "b", "q", "z", "m"])];
        let v1 = build_vocab(&docs, 1);
        let v2 = build_vocab(&docs, 1);
        assert_eq!(v1, v2);
        assert_eq!(v1.corpus_tokens(), ["b", "q", "z", "m"]);
    }

    #[test]
    fn reserved_spellings_do_not_collide() {
        let v = build_vocab(&[doc(&["<pad>", "<unk>", "x"])], 1);
        assert!(v.id("<pad>") >= 2);
        assert!(v.id("<unk>") >= 2);
        assert_ne!(v.id("<pad>"), v.id("<unk>"));
    }
}
