use std::collections::VecDeque;

use serde::Serialize;

use super::{DocGraph, EdgeKind, GraphError, NodeId};
use crate::corpus::Document;

/// Adjacency restricted to syntactic-dependency and adjacent-sentence edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSubgraph {
    pub adjacency: Vec<Vec<NodeId>>,
}

impl PathSubgraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }
}

/// A simple path of word nodes from a head anchor to a tail anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Path {
    pub nodes: Vec<NodeId>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn path_subgraph(graph: &DocGraph) -> PathSubgraph {
    let mut adjacency = vec![Vec::new(); graph.node_count];
    for &(u, v, kind) in &graph.edges {
        if matches!(
            kind,
            EdgeKind::SyntacticDependency | EdgeKind::AdjacentSentence
        ) && u != v
        {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
    }
    for n in &mut adjacency {
        n.sort_unstable();
        n.dedup();
    }
    PathSubgraph { adjacency }
}

/// Minimum-hop path by breadth-first search. Neighbors are expanded in
/// ascending order and the first discovered parent is kept, which yields
/// the lexicographically smallest shortest path.
pub fn shortest_path(sub: &PathSubgraph, src: NodeId, dst: NodeId) -> Result<Path, GraphError> {
    let n = sub.node_count();
    for x in [src, dst] {
        if x >= n {
            return Err(GraphError::NodeOutOfRange(x));
        }
    }
    if src == dst {
        return Ok(Path { nodes: vec![src] });
    }
    let mut parent = vec![usize::MAX; n];
    parent[src] = src;
    let mut queue = VecDeque::from([src]);
    'bfs: while let Some(u) = queue.pop_front() {
        for &v in &sub.adjacency[u] {
            if parent[v] == usize::MAX {
                parent[v] = u;
                if v == dst {
                    break 'bfs;
                }
                queue.push_back(v);
            }
        }
    }
    if parent[dst] == usize::MAX {
        return Err(GraphError::NoPath { src, dst });
    }
    let mut nodes = vec![dst];
    let mut cur = dst;
    while cur != src {
        cur = parent[cur];
        nodes.push(cur);
    }
    nodes.reverse();
    Ok(Path { nodes })
}

/// Paths for every (head mention, tail mention) pair, computing the path
/// subgraph on the fly.
pub fn mention_paths(
    doc: &Document,
    graph: &DocGraph,
    e1: usize,
    e2: usize,
    cap: Option<usize>,
) -> Result<Vec<Path>, GraphError> {
    mention_paths_in(&path_subgraph(graph), doc, graph, e1, e2, cap)
}

/// Paths in row-major mention order. With `cap`, only the `cap` shortest
/// are kept (ties by mention order), still listed in mention order.
pub fn mention_paths_in(
    sub: &PathSubgraph,
    doc: &Document,
    graph: &DocGraph,
    e1: usize,
    e2: usize,
    cap: Option<usize>,
) -> Result<Vec<Path>, GraphError> {
    if e1 == e2 {
        return Err(GraphError::SameEntity(e1));
    }
    let mut paths =
        Vec::with_capacity(doc.entities[e1].mentions.len() * doc.entities[e2].mentions.len());
    for a in 0..doc.entities[e1].mentions.len() {
        for b in 0..doc.entities[e2].mentions.len() {
            paths.push(shortest_path(
                sub,
                graph.anchor(e1, a),
                graph.anchor(e2, b),
            )?);
        }
    }
    match cap {
        Some(cap) if paths.len() > cap => {
            let mut order: Vec<usize> = (0..paths.len()).collect();
            order.sort_by_key(|&i| paths[i].len());
            let mut keep: Vec<usize> = order.into_iter().take(cap).collect();
            keep.sort_unstable();
            Ok(keep.into_iter().map(|i| paths[i].clone()).collect())
        }
        _ => Ok(paths),
    }
}

#[cfg(test)]
mod tests {
    use super::super::build_graph;
    use super::*;
    use crate::corpus::{Entity, Mention, Sentence};

    fn graph_of(n: usize, edges: &[(usize, usize)]) -> PathSubgraph {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|v| v.sort_unstable());
        PathSubgraph { adjacency }
    }

    fn sent(n: usize, heads: &[i64]) -> Sentence {
        Sentence {
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            dep_heads: heads.to_vec(),
        }
    }

    #[test]
    fn subgraph_filters_kinds() {
        let doc = Document {
            doc_id: "d".into(),
            sentences: vec![sent(2, &[-1, 0])],
            entities: vec![],
            facts: vec![],
        };
        assert_eq!(
            path_subgraph(&build_graph(&doc)).adjacency,
            vec![vec![1], vec![0]]
        );

        let doc = Document {
            doc_id: "d".into(),
            sentences: vec![sent(1, &[-1])],
            entities: vec![],
            facts: vec![],
        };
        assert_eq!(
            path_subgraph(&build_graph(&doc)).adjacency,
            vec![Vec::<usize>::new()]
        );

        let doc = super::super::tests::two_sentence();
        let sub = path_subgraph(&build_graph(&doc));
        assert!(sub.is_edge(0, 3));
        assert!(!sub.is_edge(2, 3));
        assert!(!sub.is_edge(1, 4));
    }

    #[test]
    fn bfs_examples() {
        let chain = graph_of(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(shortest_path(&chain, 2, 2).unwrap().nodes, vec![2]);
        assert_eq!(shortest_path(&chain, 0, 3).unwrap().nodes, vec![0, 1, 2, 3]);
        let diamond = graph_of(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(shortest_path(&diamond, 0, 3).unwrap().nodes, vec![0, 1, 3]);
        let split = graph_of(3, &[(0, 1)]);
        assert_eq!(
            shortest_path(&split, 0, 2),
            Err(GraphError::NoPath { src: 0, dst: 2 })
        );
        assert_eq!(
            shortest_path(&split, 0, 9),
            Err(GraphError::NodeOutOfRange(9))
        );
    }

    fn mentions_doc() -> Document {
        // One sentence chain w0 <- w1 <- ... <- w7, root at 0.
        let heads: Vec<i64> = (0..8).map(|i| i as i64 - 1).collect();
        let m = |s: usize| Mention {
            sent_id: 0,
            span_start: s,
            span_end: s + 1,
            surface: format!("w{s}"),
        };
        Document {
            doc_id: "d".into(),
            sentences: vec![sent(8, &heads)],
            entities: vec![
                Entity {
                    entity_id: 0,
                    mentions: vec![m(0), m(3)],
                    entity_type: None,
                },
                Entity {
                    entity_id: 1,
                    mentions: vec![m(7), m(4), m(5)],
                    entity_type: None,
                },
                Entity {
                    entity_id: 2,
                    mentions: vec![m(6)],
                    entity_type: None,
                },
            ],
            facts: vec![],
        }
    }

    #[test]
    fn mention_path_counts_and_cap() {
        let doc = mentions_doc();
        let g = build_graph(&doc);
        assert_eq!(mention_paths(&doc, &g, 0, 2, None).unwrap().len(), 2);
        assert_eq!(mention_paths(&doc, &g, 2, 0, Some(1)).unwrap().len(), 1);
        let all = mention_paths(&doc, &g, 0, 1, None).unwrap();
        assert_eq!(all.len(), 6);
        let ends: Vec<_> = all
            .iter()
            .map(|p| (p.nodes[0], *p.nodes.last().unwrap()))
            .collect();
        assert_eq!(ends, vec![(0, 7), (0, 4), (0, 5), (3, 7), (3, 4), (3, 5)]);

        // Sort-and-truncate oracle.
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by_key(|&i| all[i].len());
        let mut keep = idx[..4].to_vec();
        keep.sort_unstable();
        let expect: Vec<Path> = keep.iter().map(|&i| all[i].clone()).collect();
        assert_eq!(mention_paths(&doc, &g, 0, 1, Some(4)).unwrap(), expect);
        assert!(mention_paths(&doc, &g, 1, 1, None).is_err());
    }
}
