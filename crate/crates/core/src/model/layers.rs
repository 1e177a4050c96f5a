use std::ops::Range;
use std::rc::Rc;

use super::params::BlockVars;
use super::{AblationFlags, Aggregator, ModelError};
use crate::corpus::Document;
use crate::docgraph::DocGraph;
use crate::ndiff::{Graph, GruVars, NdError, SparseRows, Tensor, Var};

/// Neighbor-sum map over the union adjacency (self-loops included).
pub fn adjacency_rows(graph: &DocGraph) -> SparseRows {
    SparseRows {
        n_src: graph.node_count,
        rows: graph
            .adjacency
            .iter()
            .map(|ns| ns.iter().map(|&j| (j, 1.0)).collect())
            .collect(),
    }
}

/// One row per entity: the mean over its mentions of the mean over each
/// mention's token span.
pub fn entity_rows(doc: &Document) -> SparseRows {
    let offsets = doc.sentence_offsets();
    let rows = doc
        .entities
        .iter()
        .map(|e| {
            let mut row = Vec::new();
            let per_mention = 1.0 / e.mentions.len() as f64;
            for m in &e.mentions {
                let span = doc.mention_range(&offsets, m);
                let w = per_mention / span.len() as f64;
                row.extend(span.map(|t| (t, w)));
            }
            row
        })
        .collect();
    SparseRows {
        n_src: doc.token_count(),
        rows,
    }
}

/// Runs `gru` over `rows` of the projected input and returns every state,
/// stacked in step order.
fn run_sequence<'g>(
    g: &'g Graph,
    gru: &GruVars<'g>,
    proj: Var<'g>,
    rows: &[usize],
) -> Result<Var<'g>, NdError> {
    let mut h = g.zeros(&[1, gru.hidden()]);
    let mut states = Vec::with_capacity(rows.len());
    for &r in rows {
        h = gru.step(proj.gather_rows(&[r])?, h)?;
        states.push(h);
    }
    g.concat(&states, 0)
}

/// Runs `gru` over several sequences at once and returns each sequence's
/// final state, `[seqs.len() × hidden]` in input order. Sequences are
/// processed longest-first so the active set at every step is a prefix.
pub(crate) fn run_batched_final<'g>(
    g: &'g Graph,
    gru: &GruVars<'g>,
    proj: Var<'g>,
    seqs: &[Vec<usize>],
) -> Result<Var<'g>, ModelError> {
    if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
        return Err(ModelError::Config(
            "path encoder needs non-empty paths".into(),
        ));
    }
    let d = gru.hidden();
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by(|&a, &b| seqs[b].len().cmp(&seqs[a].len()));
    let max_len = seqs[order[0]].len();
    let mut states = Vec::with_capacity(max_len);
    let mut offsets = Vec::with_capacity(max_len);
    let mut offset = 0;
    let mut h: Option<Var<'g>> = None;
    for j in 0..max_len {
        let active = order.iter().take_while(|&&s| seqs[s].len() > j).count();
        let inputs: Vec<usize> = order[..active].iter().map(|&s| seqs[s][j]).collect();
        let xw = proj.gather_rows(&inputs)?;
        let prev = match h {
            None => g.zeros(&[active, d]),
            Some(h) if h.shape()[0] > active => h.gather_rows(&(0..active).collect::<Vec<_>>())?,
            Some(h) => h,
        };
        let next = gru.step(xw, prev)?;
        offsets.push(offset);
        offset += active;
        states.push(next);
        h = Some(next);
    }
    let all = if states.len() == 1 {
        states[0]
    } else {
        g.concat(&states, 0)?
    };
    let mut idx = vec![0; seqs.len()];
    for (pos, &s) in order.iter().enumerate() {
        idx[s] = offsets[seqs[s].len() - 1] + pos;
    }
    Ok(all.gather_rows(&idx)?)
}

/// Embedding lookup, dropout, and a bidirectional GRU over the flat token
/// sequence. Row `t` of the result is `[forward state; backward state]`.
pub fn encode_text<'g>(
    g: &'g Graph,
    embedding: Var<'g>,
    fwd: &GruVars<'g>,
    bwd: &GruVars<'g>,
    token_ids: &[usize],
    dropout: f64,
) -> Result<Var<'g>, ModelError> {
    if token_ids.is_empty() {
        return Err(ModelError::EmptyDocument);
    }
    let x = embedding.gather_rows(token_ids)?.dropout(dropout)?;
    let n = token_ids.len();
    let forward_rows: Vec<usize> = (0..n).collect();
    let backward_rows: Vec<usize> = (0..n).rev().collect();
    let f = run_sequence(g, fwd, fwd.project(x)?, &forward_rows)?;
    let b = run_sequence(g, bwd, bwd.project(x)?, &backward_rows)?;
    // Backward states were produced last-token first.
    let b = b.gather_rows(&backward_rows)?;
    Ok(g.concat(&[f, b], 1)?)
}

/// One densely connected sub-layer: `ReLU(Σ_{j∈N(i)} W·ĥ_j + b)` with
/// `ĥ_j = [X_j; previous sub-layer outputs at j]`.
pub fn dcgcn_sublayer<'g>(
    x: Var<'g>,
    prev_outputs: &[Var<'g>],
    adjacency: &Rc<SparseRows>,
    w: Var<'g>,
    b: Var<'g>,
    dropout: f64,
) -> Result<Var<'g>, ModelError> {
    let g = x.graph();
    let hat = if prev_outputs.is_empty() {
        x
    } else {
        let mut parts = vec![x];
        parts.extend_from_slice(prev_outputs);
        g.concat(&parts, 1)?
    };
    let width = hat.shape()[1];
    let w_shape = w.shape();
    if w_shape.len() != 2 || w_shape[1] != width {
        return Err(ModelError::Nd(NdError::Shape(format!(
            "sub-layer input width {width} does not match weight {w_shape:?}"
        ))));
    }
    let agg = hat.dropout(dropout)?.sparse_mix(adjacency.clone())?;
    Ok(agg.linear(w, b)?.relu())
}

/// `FC(X + [h¹; …; h^m])` over densely connected sub-layers.
pub fn dcgcn_block<'g>(
    x: Var<'g>,
    adjacency: &Rc<SparseRows>,
    block: &BlockVars<'g>,
    dropout: f64,
) -> Result<Var<'g>, ModelError> {
    let g = x.graph();
    let mut outs: Vec<Var<'g>> = Vec::with_capacity(block.sub.len());
    for &(w, b) in &block.sub {
        let h = dcgcn_sublayer(x, &outs, adjacency, w, b, dropout)?;
        outs.push(h);
    }
    let cat = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat(&outs, 1)?
    };
    if cat.shape() != x.shape() {
        return Err(ModelError::Nd(NdError::Shape(format!(
            "concatenated sub-layer outputs {:?} do not match block input {:?}",
            cat.shape(),
            x.shape()
        ))));
    }
    Ok(x.add(cat)?.linear(block.out_w, block.out_b)?)
}

/// Chains the DCGCN blocks; identity when DCGCN is disabled.
pub fn coarse_encode<'g>(
    h: Var<'g>,
    adjacency: &Rc<SparseRows>,
    blocks: &[BlockVars<'g>],
    use_dcgcn: bool,
    dropout: f64,
) -> Result<Var<'g>, ModelError> {
    if !use_dcgcn {
        return Ok(h);
    }
    let mut o = h;
    for block in blocks {
        o = dcgcn_block(o, adjacency, block, dropout)?;
    }
    Ok(o)
}

/// Entity representations `[entities × d_h]` from coarse word states.
pub fn coarse_entity<'g>(o: Var<'g>, entity_rows: &Rc<SparseRows>) -> Result<Var<'g>, ModelError> {
    Ok(o.sparse_mix(entity_rows.clone())?)
}

/// Bidirectional path encoding for a batch of paths over `o`.
/// Returns `(m_h, m_t)`, each `[paths × d_h]`: the backward state at the
/// first node and the forward state at the last node.
pub fn encode_paths<'g>(
    o: Var<'g>,
    paths: &[Vec<usize>],
    fwd: &GruVars<'g>,
    bwd: &GruVars<'g>,
) -> Result<(Var<'g>, Var<'g>), ModelError> {
    let g = o.graph();
    let m_t = run_batched_final(g, fwd, fwd.project(o)?, paths)?;
    let reversed: Vec<Vec<usize>> = paths
        .iter()
        .map(|p| p.iter().rev().copied().collect())
        .collect();
    let m_h = run_batched_final(g, bwd, bwd.project(o)?, &reversed)?;
    Ok((m_h, m_t))
}

/// Contiguous path ranges, one per pair.
pub fn segments_from_counts(counts: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    counts
        .iter()
        .map(|&c| {
            let r = start..start + c;
            start += c;
            r
        })
        .collect()
}

pub struct Attended<'g> {
    pub h: Var<'g>,
    pub t: Var<'g>,
    /// Path weights `[paths × 1]`, normalized within each pair's segment.
    pub alpha: Var<'g>,
}

/// Aggregates path representations per pair. `head_rows`/`tail_rows` hold
/// the coarse entity representations repeated for each path.
#[allow(clippy::too_many_arguments)]
pub fn attend_paths<'g>(
    head_rows: Var<'g>,
    tail_rows: Var<'g>,
    m_h: Var<'g>,
    m_t: Var<'g>,
    segments: &[Range<usize>],
    attn_w: Var<'g>,
    attn_b: Var<'g>,
    aggregator: Aggregator,
) -> Result<Attended<'g>, ModelError> {
    let g = m_h.graph();
    let n = m_h.shape()[0];
    if segments.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(ModelError::Config(
            "attention needs at least one path per pair".into(),
        ));
    }
    if segments.last().map(|s| s.end) != Some(n) {
        return Err(ModelError::Config(format!(
            "path segments do not cover {n} paths"
        )));
    }
    let alpha = match aggregator {
        Aggregator::Attention => {
            let feats = g.concat(&[head_rows, tail_rows, m_h, m_t], 1)?;
            let scores = feats.linear(attn_w, attn_b)?;
            g.segment_softmax(scores, Rc::new(segments.to_vec()))?
        }
        Aggregator::Mean => {
            let mut a = vec![0.0; n];
            for s in segments {
                let w = 1.0 / s.len() as f64;
                a[s.clone()].iter_mut().for_each(|x| *x = w);
            }
            g.constant(Tensor::matrix(n, 1, a)?)
        }
    };
    let pool = Rc::new(SparseRows {
        n_src: n,
        rows: segments
            .iter()
            .map(|s| s.clone().map(|i| (i, 1.0)).collect())
            .collect(),
    });
    let h = m_h.mul_col(alpha)?.sparse_mix(pool.clone())?;
    let t = m_t.mul_col(alpha)?.sparse_mix(pool)?;
    Ok(Attended { h, t, alpha })
}

/// Logits `uᵀ W_c[:, r, :] v + b_c[r]` with `u = [h̃; h]`, `v = [t̃; t]`;
/// probabilities are their sigmoid. `fine` is `None` when the fine level is
/// disabled. Returns `[pairs × n_r]`.
#[allow(clippy::too_many_arguments)]
pub fn pair_logits<'g>(
    head: Var<'g>,
    tail: Var<'g>,
    fine: Option<(Var<'g>, Var<'g>)>,
    bil_w: Var<'g>,
    bil_b: Var<'g>,
    flags: &AblationFlags,
    dropout: f64,
) -> Result<Var<'g>, ModelError> {
    let g = head.graph();
    let shape = head.shape();
    let zeros = || g.zeros(&shape);
    let (hc, tc) = if flags.use_coarse_repr {
        (head, tail)
    } else {
        (zeros(), zeros())
    };
    let (hf, tf) = match fine {
        Some((h, t)) if flags.use_fine => (h, t),
        _ => (zeros(), zeros()),
    };
    let u = g.concat(&[hc, hf], 1)?.dropout(dropout)?;
    let v = g.concat(&[tc, tf], 1)?.dropout(dropout)?;
    Ok(u.bilinear(bil_w, v)?.add_row(bil_b)?)
}

/// `sigmoid` of [`pair_logits`].
#[allow(clippy::too_many_arguments)]
pub fn score_pairs<'g>(
    head: Var<'g>,
    tail: Var<'g>,
    fine: Option<(Var<'g>, Var<'g>)>,
    bil_w: Var<'g>,
    bil_b: Var<'g>,
    flags: &AblationFlags,
    dropout: f64,
) -> Result<Var<'g>, ModelError> {
    Ok(pair_logits(head, tail, fine, bil_w, bil_b, flags, dropout)?.sigmoid())
}
