use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    validate_document_with, CorpusError, Document, Entity, Mention, RelationFact, RelationVocab,
    Sentence,
};

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    name: String,
    sent_id: usize,
    pos: [usize; 2],
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDocument {
    title: String,
    sents: Vec<Vec<String>>,
    dep_heads: Vec<Vec<i64>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default)]
    labels: Vec<RawLabel>,
}

impl RawDocument {
    fn into_document(self, index: usize) -> Result<Document, CorpusError> {
        if self.sents.len() != self.dep_heads.len() {
            return Err(CorpusError::Parse {
                index,
                title: self.title,
                message: format!(
                    "dep_heads has {} sentences but sents has {}",
                    self.dep_heads.len(),
                    self.sents.len()
                ),
            });
        }
        let sentences = self
            .sents
            .into_iter()
            .zip(self.dep_heads)
            .map(|(tokens, dep_heads)| Sentence { tokens, dep_heads })
            .collect();
        let entities = self
            .vertex_set
            .into_iter()
            .enumerate()
            .map(|(entity_id, ms)| Entity {
                entity_id,
                entity_type: ms.first().and_then(|m| m.kind.clone()),
                mentions: ms
                    .into_iter()
                    .map(|m| Mention {
                        sent_id: m.sent_id,
                        span_start: m.pos[0],
                        span_end: m.pos[1],
                        surface: m.name,
                    })
                    .collect(),
            })
            .collect();
        let facts = self
            .labels
            .into_iter()
            .map(|l| RelationFact {
                head: l.h,
                tail: l.t,
                relation: l.r,
                evidence: l.evidence,
            })
            .collect();
        Ok(Document {
            doc_id: self.title,
            sentences,
            entities,
            facts,
        })
    }

    fn from_document(doc: &Document) -> Self {
        RawDocument {
            title: doc.doc_id.clone(),
            sents: doc.sentences.iter().map(|s| s.tokens.clone()).collect(),
            dep_heads: doc.sentences.iter().map(|s| s.dep_heads.clone()).collect(),
            vertex_set: doc
                .entities
                .iter()
                .map(|e| {
                    e.mentions
                        .iter()
                        .map(|m| RawMention {
                            name: m.surface.clone(),
                            sent_id: m.sent_id,
                            pos: [m.span_start, m.span_end],
                            kind: e.entity_type.clone(),
                        })
                        .collect()
                })
                .collect(),
            labels: doc
                .facts
                .iter()
                .map(|f| RawLabel {
                    h: f.head,
                    t: f.tail,
                    r: f.relation.clone(),
                    evidence: f.evidence.clone(),
                })
                .collect(),
        }
    }
}

/// Parses and validates a document collection held in memory.
pub fn parse_dataset(text: &str, relations: &RelationVocab) -> Result<Vec<Document>, CorpusError> {
    parse_dataset_with(text, Some(relations))
}

/// Like `parse_dataset`; relation labels are only checked when a vocabulary
/// is given.
pub fn parse_dataset_with(
    text: &str,
    relations: Option<&RelationVocab>,
) -> Result<Vec<Document>, CorpusError> {
    let records: Vec<Value> =
        serde_json::from_str(text).map_err(|e| CorpusError::Json(e.to_string()))?;
    let mut docs = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        let title = record
            .get("title")
            .and_then(Value::as_str)
            .unwrap_or("<untitled>")
            .to_string();
        let raw: RawDocument = serde_json::from_value(record).map_err(|e| CorpusError::Parse {
            index,
            title: title.clone(),
            message: e.to_string(),
        })?;
        let doc = raw.into_document(index)?;
        let violations = validate_document_with(&doc, relations);
        if !violations.is_empty() {
            return Err(CorpusError::Validation {
                doc_id: doc.doc_id,
                violations,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads a DocRED-style document collection (with `dep_heads`) and
/// validates every record, preserving file order.
pub fn load_dataset(path: &Path, relations: &RelationVocab) -> Result<Vec<Document>, CorpusError> {
    load_dataset_with(path, Some(relations))
}

pub fn load_dataset_with(
    path: &Path,
    relations: Option<&RelationVocab>,
) -> Result<Vec<Document>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset_with(&text, relations)
}

/// Writes one label per line.
pub fn save_relation_vocab(path: &Path, relations: &RelationVocab) -> Result<(), CorpusError> {
    let text: String = relations
        .labels()
        .iter()
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_json(docs: &[Document]) -> String {
    let raw: Vec<RawDocument> = docs.iter().map(RawDocument::from_document).collect();
    serde_json::to_string_pretty(&raw).expect("documents serialize")
}

pub fn save_dataset(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    fs::write(path, to_json(docs)).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One label per line; line number is the label index. Blank lines are skipped.
pub fn load_relation_vocab(path: &Path) -> Result<RelationVocab, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let labels = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    RelationVocab::new(labels)
}
