//! Document-level word graph with five edge categories, and shortest
//! paths between mention anchors over the dependency + adjacent-sentence
//! subgraph.

mod paths;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Document;

pub use paths::{
    mention_paths, mention_paths_in, path_subgraph, shortest_path, Path, PathSubgraph,
};
pub use stats::{graph_stats, GraphStats};

/// Flat token index over the whole document, sentence-major.
pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("no path from node {src} to node {dst} in the path subgraph")]
    NoPath { src: NodeId, dst: NodeId },
    #[error("node {0} out of range")]
    NodeOutOfRange(NodeId),
    #[error("mention paths need two distinct entities, got {0} and {0}")]
    SameEntity(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EdgeKind {
    SyntacticDependency,
    AdjacentWord,
    SelfLoop,
    AdjacentSentence,
    CoreferentialMention,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 5] = [
        EdgeKind::SyntacticDependency,
        EdgeKind::AdjacentWord,
        EdgeKind::SelfLoop,
        EdgeKind::AdjacentSentence,
        EdgeKind::CoreferentialMention,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            EdgeKind::SyntacticDependency => "Dep",
            EdgeKind::AdjacentWord => "Adj",
            EdgeKind::SelfLoop => "Self",
            EdgeKind::AdjacentSentence => "AdjSent",
            EdgeKind::CoreferentialMention => "Coref",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Undirected labeled edge, stored with `u <= v`.
pub type Edge = (NodeId, NodeId, EdgeKind);

fn edge(a: NodeId, b: NodeId, kind: EdgeKind) -> Edge {
    (a.min(b), a.max(b), kind)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocGraph {
    pub node_count: usize,
    pub edges: BTreeSet<Edge>,
    /// Sorted, deduplicated neighbors over all edge kinds (self included).
    pub adjacency: Vec<Vec<NodeId>>,
    pub sentence_roots: Vec<NodeId>,
    /// `(entity, mention) → first word of the mention`.
    pub mention_anchor: BTreeMap<(usize, usize), NodeId>,
    pub warnings: Vec<String>,
}

impl DocGraph {
    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.2 == kind).count()
    }

    pub fn anchor(&self, entity: usize, mention: usize) -> NodeId {
        self.mention_anchor[&(entity, mention)]
    }
}

/// Builds the word graph of a validated document.
pub fn build_graph(doc: &Document) -> DocGraph {
    let offsets = doc.sentence_offsets();
    let node_count = doc.token_count();
    let mut edges = BTreeSet::new();
    let mut warnings = Vec::new();
    let mut sentence_roots = Vec::with_capacity(doc.sentences.len());

    for (si, sent) in doc.sentences.iter().enumerate() {
        let off = offsets[si];
        let mut roots = Vec::new();
        for (t, &h) in sent.dep_heads.iter().enumerate() {
            if h < 0 {
                roots.push(off + t);
            } else if (h as usize) != t && (h as usize) < sent.tokens.len() {
                edges.insert(edge(
                    off + t,
                    off + h as usize,
                    EdgeKind::SyntacticDependency,
                ));
            }
        }
        if roots.len() > 1 {
            warnings.push(format!(
                "sentence {si} has {} roots; using token {} as its root",
                roots.len(),
                roots[0] - off
            ));
        }
        if let Some(&r) = roots.first() {
            sentence_roots.push(r);
        }
    }
    for t in 0..node_count {
        edges.insert(edge(t, t, EdgeKind::SelfLoop));
        if t + 1 < node_count {
            edges.insert(edge(t, t + 1, EdgeKind::AdjacentWord));
        }
    }
    for w in sentence_roots.windows(2) {
        edges.insert(edge(w[0], w[1], EdgeKind::AdjacentSentence));
    }

    let mut mention_anchor = BTreeMap::new();
    for (ei, ent) in doc.entities.iter().enumerate() {
        let anchors: Vec<NodeId> = ent
            .mentions
            .iter()
            .map(|m| offsets[m.sent_id] + m.span_start)
            .collect();
        for (mi, &a) in anchors.iter().enumerate() {
            mention_anchor.insert((ei, mi), a);
            for &b in &anchors[mi + 1..] {
                edges.insert(edge(a, b, EdgeKind::CoreferentialMention));
            }
        }
    }

    let mut adjacency: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); node_count];
    for &(u, v, _) in &edges {
        adjacency[u].insert(v);
        adjacency[v].insert(u);
    }
    DocGraph {
        node_count,
        edges,
        adjacency: adjacency
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
        sentence_roots,
        mention_anchor,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, Mention, Sentence};

    fn sent(n: usize, heads: &[i64]) -> Sentence {
        Sentence {
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            dep_heads: heads.to_vec(),
        }
    }

    fn m(sent_id: usize, start: usize) -> Mention {
        Mention {
            sent_id,
            span_start: start,
            span_end: start + 1,
            surface: "x".into(),
        }
    }

    pub(super) fn two_sentence() -> Document {
        Document {
            doc_id: "fig".into(),
            sentences: vec![sent(3, &[-1, 0, 0]), sent(2, &[-1, 0])],
            entities: vec![Entity {
                entity_id: 0,
                mentions: vec![m(0, 1), m(1, 1)],
                entity_type: None,
            }],
            facts: vec![],
        }
    }

    #[test]
    fn single_token() {
        let doc = Document {
            doc_id: "d".into(),
            sentences: vec![sent(1, &[-1])],
            entities: vec![],
            facts: vec![],
        };
        let g = build_graph(&doc);
        assert_eq!(
            g.edges.iter().copied().collect::<Vec<_>>(),
            vec![(0, 0, EdgeKind::SelfLoop)]
        );
        assert_eq!(g.sentence_roots, vec![0]);
    }

    #[test]
    fn two_tokens() {
        let doc = Document {
            doc_id: "d".into(),
            sentences: vec![sent(2, &[-1, 0])],
            entities: vec![],
            facts: vec![],
        };
        let g = build_graph(&doc);
        let expect: BTreeSet<Edge> = [
            (0, 1, EdgeKind::SyntacticDependency),
            (0, 1, EdgeKind::AdjacentWord),
            (0, 0, EdgeKind::SelfLoop),
            (1, 1, EdgeKind::SelfLoop),
        ]
        .into_iter()
        .collect();
        assert_eq!(g.edges, expect);
        assert_eq!(g.adjacency, vec![vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn two_sentences_cross_edges() {
        let g = build_graph(&two_sentence());
        assert!(g.edges.contains(&(0, 3, EdgeKind::AdjacentSentence)));
        assert!(g.edges.contains(&(1, 4, EdgeKind::CoreferentialMention)));
        assert!(g.edges.contains(&(2, 3, EdgeKind::AdjacentWord)));
        assert_eq!(g.count(EdgeKind::SelfLoop), 5);
        assert_eq!(g.count(EdgeKind::SyntacticDependency), 3);
        assert_eq!(g.count(EdgeKind::AdjacentWord), 4);
        assert_eq!(g.count(EdgeKind::AdjacentSentence), 1);
        assert_eq!(g.count(EdgeKind::CoreferentialMention), 1);
        assert_eq!(g.sentence_roots, vec![0, 3]);
        assert_eq!(g.anchor(0, 1), 4);
    }

    #[test]
    fn multiple_roots_warn_and_use_first() {
        let doc = Document {
            doc_id: "d".into(),
            sentences: vec![sent(3, &[-1, -1, 1]), sent(1, &[-1])],
            entities: vec![],
            facts: vec![],
        };
        let g = build_graph(&doc);
        assert_eq!(g.sentence_roots, vec![0, 3]);
        assert_eq!(g.warnings.len(), 1);
        assert!(g.edges.contains(&(0, 3, EdgeKind::AdjacentSentence)));
    }

    #[test]
    fn mention_order_does_not_matter() {
        let mut doc = two_sentence();
        let a = build_graph(&doc);
        doc.entities[0].mentions.reverse();
        let b = build_graph(&doc);
        assert_eq!(a.edges, b.edges);
    }
}
