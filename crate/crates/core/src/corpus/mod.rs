//! Document, entity and relation data model, dataset ingestion, vocabulary
//! and word vectors.

mod io;
mod validate;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    load_dataset, load_dataset_with, load_relation_vocab, parse_dataset, parse_dataset_with,
    save_dataset, save_relation_vocab, to_json,
};
pub use validate::{validate_document, validate_document_with, Violation};
pub use vocab::{build_vocab, load_embeddings, EmbeddingTable, Vocab, PAD, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset: {0}")]
    Json(String),
    #[error("record {index} ({title}): {message}")]
    Parse {
        index: usize,
        title: String,
        message: String,
    },
    #[error("document {doc_id} is invalid: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation {
        doc_id: String,
        violations: Vec<Violation>,
    },
    #[error("embedding file {path}, line {line}: {message}")]
    Embedding {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("relation vocabulary: {0}")]
    RelationVocab(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    /// Head index within the sentence per token; `-1` marks a root.
    pub dep_heads: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub sent_id: usize,
    /// Inclusive.
    pub span_start: usize,
    /// Exclusive.
    pub span_end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: usize,
    pub mentions: Vec<Mention>,
    pub entity_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationFact {
    pub head: usize,
    pub tail: usize,
    pub relation: String,
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub entities: Vec<Entity>,
    pub facts: Vec<RelationFact>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    /// Flat index of the first token of every sentence.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sentences.len());
        let mut acc = 0;
        for s in &self.sentences {
            offsets.push(acc);
            acc += s.tokens.len();
        }
        offsets
    }

    /// Tokens in document order.
    pub fn flat_tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    /// Flat token range covered by a mention.
    pub fn mention_range(&self, offsets: &[usize], m: &Mention) -> std::ops::Range<usize> {
        offsets[m.sent_id] + m.span_start..offsets[m.sent_id] + m.span_end
    }

    /// Minimum |sentence id difference| over all mention pairs; 0 when
    /// the two entities share a sentence.
    pub fn sentence_distance(&self, e1: usize, e2: usize) -> usize {
        let mut best = usize::MAX;
        for a in &self.entities[e1].mentions {
            for b in &self.entities[e2].mentions {
                best = best.min(a.sent_id.abs_diff(b.sent_id));
            }
        }
        best
    }

    /// Display name of an entity (surface of its first mention).
    pub fn entity_name(&self, entity: usize) -> &str {
        &self.entities[entity].mentions[0].surface
    }
}

/// Ordered relation labels; position is the label index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocab {
    labels: Vec<String>,
    index: std::collections::HashMap<String, usize>,
}

impl RelationVocab {
    pub fn new(labels: Vec<String>) -> Result<Self, CorpusError> {
        let mut index = std::collections::HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(CorpusError::RelationVocab(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    /// Sorted distinct labels used by the facts of `docs`.
    pub fn from_documents(docs: &[Document]) -> Self {
        let set: std::collections::BTreeSet<&str> = docs
            .iter()
            .flat_map(|d| d.facts.iter().map(|f| f.relation.as_str()))
            .collect();
        Self::new(set.into_iter().map(String::from).collect()).expect("set labels are unique")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }
}

/// An ordered entity pair with its multi-label target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePair {
    pub head: usize,
    pub tail: usize,
    pub labels: Vec<bool>,
}

impl CandidatePair {
    pub fn label_vector(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Every ordered pair `(i, j)`, `i ≠ j`, in row-major order, with bit `r`
/// set iff the fact `(i, r, j)` is present.
pub fn candidate_pairs(doc: &Document, relations: &RelationVocab) -> Vec<CandidatePair> {
    let n = doc.entities.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1));
    for head in 0..n {
        for tail in 0..n {
            if head != tail {
                pairs.push(CandidatePair {
                    head,
                    tail,
                    labels: vec![false; relations.len()],
                });
            }
        }
    }
    for f in &doc.facts {
        if f.head == f.tail || f.head >= n || f.tail >= n {
            continue;
        }
        let Some(r) = relations.get(&f.relation) else {
            continue;
        };
        let idx = f.head * (n - 1) + if f.tail > f.head { f.tail - 1 } else { f.tail };
        pairs[idx].labels[r] = true;
    }
    pairs
}
