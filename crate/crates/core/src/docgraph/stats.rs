use std::collections::BTreeMap;

use serde::Serialize;

use super::{build_graph, mention_paths_in, path_subgraph, EdgeKind, GraphError};
use crate::corpus::Document;

/// Corpus-level edge counts and path-length histograms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub documents: usize,
    /// Indexed by [`EdgeKind::index`].
    pub edge_counts: [usize; 5],
    /// sentence distance → path node count → number of mention paths.
    pub path_lengths: BTreeMap<usize, BTreeMap<usize, usize>>,
    pub unreachable_paths: usize,
    pub warnings: usize,
}

impl GraphStats {
    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edge_counts[kind.index()]
    }

    pub fn merge(&mut self, other: &GraphStats) {
        self.documents += other.documents;
        for (a, b) in self.edge_counts.iter_mut().zip(other.edge_counts) {
            *a += b;
        }
        for (d, hist) in &other.path_lengths {
            let mine = self.path_lengths.entry(*d).or_default();
            for (len, c) in hist {
                *mine.entry(*len).or_default() += c;
            }
        }
        self.unreachable_paths += other.unreachable_paths;
        self.warnings += other.warnings;
    }

    /// Tab-separated report: an edge-count section then a histogram section.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("section\tkey\tvalue\n");
        out.push_str(&format!("summary\tdocuments\t{}\n", self.documents));
        for kind in EdgeKind::ALL {
            out.push_str(&format!(
                "edges\t{}\t{}\n",
                kind.short_name(),
                self.count(kind)
            ));
        }
        out.push_str(&format!(
            "summary\tunreachable_paths\t{}\n",
            self.unreachable_paths
        ));
        out.push_str(&format!(
            "summary\tmulti_root_warnings\t{}\n",
            self.warnings
        ));
        out.push_str("\ndistance\tpath_length\tcount\n");
        for (d, hist) in &self.path_lengths {
            for (len, c) in hist {
                out.push_str(&format!("{d}\t{len}\t{c}\n"));
            }
        }
        out
    }
}

/// Aggregates graph statistics over `docs`. Paths are taken for each
/// unordered entity pair and binned by the pair's sentence distance.
pub fn graph_stats(docs: &[Document]) -> GraphStats {
    let mut stats = GraphStats::default();
    for doc in docs {
        let g = build_graph(doc);
        let sub = path_subgraph(&g);
        stats.documents += 1;
        stats.warnings += g.warnings.len();
        for &(_, _, kind) in &g.edges {
            stats.edge_counts[kind.index()] += 1;
        }
        for e1 in 0..doc.entities.len() {
            for e2 in e1 + 1..doc.entities.len() {
                let dist = doc.sentence_distance(e1, e2);
                match mention_paths_in(&sub, doc, &g, e1, e2, None) {
                    Ok(paths) => {
                        let hist = stats.path_lengths.entry(dist).or_default();
                        for p in paths {
                            *hist.entry(p.len()).or_default() += 1;
                        }
                    }
                    Err(GraphError::NoPath { .. }) => stats.unreachable_paths += 1,
                    Err(e) => unreachable!("validated document: {e}"),
                }
            }
        }
    }
    stats
}
