use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{
    adjacency_rows, attend_paths, coarse_encode, coarse_entity, encode_paths, encode_text,
    entity_rows, pair_logits, segments_from_counts,
};
use super::params::BoundParams;
use super::{CferConfig, CferParams, ModelError, PathMode};
use crate::corpus::{candidate_pairs, CandidatePair, Document, RelationVocab, Vocab};
use crate::docgraph::{build_graph, mention_paths_in, path_subgraph, DocGraph, Path};
use crate::ndiff::{Graph, Mode, SparseRows, Tensor};
use crate::seeds::mix_seed;

const SINGLE_PATH_STREAM: u64 = 0x5EED_9A75;

/// A document converted to model inputs: token ids, graph maps,
/// candidate pairs with labels, and mention-pair paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub doc_id: String,
    pub token_ids: Vec<usize>,
    pub adjacency: SparseRows,
    pub entity_rows: SparseRows,
    pub pairs: Vec<CandidatePair>,
    /// Flattened `[pairs × n_r]` targets.
    pub labels: Vec<f64>,
    /// Paths per pair; empty when the fine level is disabled.
    pub paths: Vec<Vec<Path>>,
    pub warnings: Vec<String>,
}

pub fn prepare(
    doc: &Document,
    vocab: &Vocab,
    relations: &RelationVocab,
    config: &CferConfig,
) -> Result<PreparedDoc, ModelError> {
    prepare_with_graph(doc, &build_graph(doc), vocab, relations, config)
}

pub fn prepare_with_graph(
    doc: &Document,
    graph: &DocGraph,
    vocab: &Vocab,
    relations: &RelationVocab,
    config: &CferConfig,
) -> Result<PreparedDoc, ModelError> {
    if doc.token_count() == 0 {
        return Err(ModelError::EmptyDocument);
    }
    if relations.len() != config.n_r {
        return Err(ModelError::Config(format!(
            "relation vocabulary has {} labels but n_r = {}",
            relations.len(),
            config.n_r
        )));
    }
    let pairs = candidate_pairs(doc, relations);
    let labels = pairs.iter().flat_map(CandidatePair::label_vector).collect();
    let paths = if config.ablation.use_fine {
        let sub = path_subgraph(graph);
        pairs
            .iter()
            .map(|p| {
                mention_paths_in(&sub, doc, graph, p.head, p.tail, config.path_cap).map_err(
                    |source| ModelError::Graph {
                        doc_id: doc.doc_id.clone(),
                        source,
                    },
                )
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    Ok(PreparedDoc {
        doc_id: doc.doc_id.clone(),
        token_ids: doc.flat_tokens().map(|t| vocab.id(t)).collect(),
        adjacency: adjacency_rows(graph),
        entity_rows: entity_rows(doc),
        pairs,
        labels,
        paths,
        warnings: graph.warnings.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOutput {
    pub head: usize,
    pub tail: usize,
    /// `P(r | head, tail)` for every relation.
    pub probabilities: Vec<f64>,
    /// Weights over `paths`; empty when the fine level is disabled.
    pub attention: Vec<f64>,
    pub paths: Vec<Path>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub pairs: Vec<PairOutput>,
    /// Mean BCE over pairs.
    pub loss: f64,
}

/// Paths used per pair: all of them, or one sampled uniformly from the
/// pair's stream in single-path mode.
fn select_paths(prepared: &PreparedDoc, config: &CferConfig, stream_seed: u64) -> Vec<Vec<Path>> {
    match config.ablation.paths {
        PathMode::All => prepared.paths.clone(),
        PathMode::SingleRandom => prepared
            .paths
            .iter()
            .enumerate()
            .map(|(i, ps)| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    stream_seed,
                    SINGLE_PATH_STREAM,
                    i as u64,
                ]));
                vec![ps[rng.random_range(0..ps.len())].clone()]
            })
            .collect(),
    }
}

struct Built<'g> {
    probs: crate::ndiff::Var<'g>,
    loss: crate::ndiff::Var<'g>,
    alpha: Option<crate::ndiff::Var<'g>>,
    used: Vec<Vec<Path>>,
}

fn build<'g>(
    g: &'g Graph,
    p: &BoundParams<'g>,
    prepared: &PreparedDoc,
    config: &CferConfig,
    stream_seed: u64,
) -> Result<Built<'g>, ModelError> {
    if prepared.pairs.is_empty() {
        return Err(ModelError::NoPairs(prepared.doc_id.clone()));
    }
    let flags = &config.ablation;
    let h = encode_text(
        g,
        p.embedding,
        &p.text_fwd,
        &p.text_bwd,
        &prepared.token_ids,
        config.dropout_other,
    )?;
    let adjacency = Rc::new(prepared.adjacency.clone());
    let o = coarse_encode(
        h,
        &adjacency,
        &p.blocks,
        flags.use_dcgcn,
        config.dropout_dcgcn,
    )?;
    let entities = coarse_entity(o, &Rc::new(prepared.entity_rows.clone()))?;
    let heads: Vec<usize> = prepared.pairs.iter().map(|c| c.head).collect();
    let tails: Vec<usize> = prepared.pairs.iter().map(|c| c.tail).collect();
    let head_rep = entities.gather_rows(&heads)?;
    let tail_rep = entities.gather_rows(&tails)?;

    let (fine, alpha, used) = if flags.use_fine {
        let used = select_paths(prepared, config, stream_seed);
        let counts: Vec<usize> = used.iter().map(Vec::len).collect();
        let flat: Vec<Vec<usize>> = used.iter().flatten().map(|p| p.nodes.clone()).collect();
        let mut path_heads = Vec::with_capacity(flat.len());
        let mut path_tails = Vec::with_capacity(flat.len());
        for (c, &n) in prepared.pairs.iter().zip(&counts) {
            path_heads.extend(std::iter::repeat_n(c.head, n));
            path_tails.extend(std::iter::repeat_n(c.tail, n));
        }
        let (m_h, m_t) = encode_paths(o, &flat, &p.path_fwd, &p.path_bwd)?;
        let att = attend_paths(
            entities.gather_rows(&path_heads)?,
            entities.gather_rows(&path_tails)?,
            m_h,
            m_t,
            &segments_from_counts(&counts),
            p.attn_w,
            p.attn_b,
            flags.aggregator,
        )?;
        (Some((att.h, att.t)), Some(att.alpha), used)
    } else {
        (None, None, Vec::new())
    };
    let logits = pair_logits(
        head_rep,
        tail_rep,
        fine,
        p.bil_w,
        p.bil_b,
        flags,
        config.dropout_other,
    )?;
    let probs = logits.sigmoid();
    let loss = logits
        .bce_logits(&prepared.labels)?
        .scale(1.0 / prepared.pairs.len() as f64);
    Ok(Built {
        probs,
        loss,
        alpha,
        used,
    })
}

/// Forward pass without gradient tracking.
pub fn forward(
    prepared: &PreparedDoc,
    params: &CferParams,
    config: &CferConfig,
    mode: Mode,
    stream_seed: u64,
) -> Result<ForwardOutput, ModelError> {
    let g = Graph::new(mode, stream_seed);
    let bound = BoundParams::bind(&g, params, config, false);
    let built = build(&g, &bound, prepared, config, stream_seed)?;
    let probs = built.probs.tensor();
    let alpha = built
        .alpha
        .map(|a| a.tensor().into_data())
        .unwrap_or_default();
    let n_r = config.n_r;
    let mut cursor = 0;
    let pairs = prepared
        .pairs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let paths = built.used.get(i).cloned().unwrap_or_default();
            let attention = alpha
                .get(cursor..cursor + paths.len())
                .map(<[f64]>::to_vec)
                .unwrap_or_default();
            cursor += paths.len();
            PairOutput {
                head: c.head,
                tail: c.tail,
                probabilities: probs.data()[i * n_r..(i + 1) * n_r].to_vec(),
                attention,
                paths,
            }
        })
        .collect();
    let loss = built.loss.value().data()[0];
    Ok(ForwardOutput { pairs, loss })
}

/// Loss and gradients for every parameter, in registration order.
pub fn loss_and_grads(
    prepared: &PreparedDoc,
    params: &CferParams,
    config: &CferConfig,
    mode: Mode,
    stream_seed: u64,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let g = Graph::new(mode, stream_seed);
    let bound = BoundParams::bind(&g, params, config, true);
    let built = build(&g, &bound, prepared, config, stream_seed)?;
    let loss = built.loss.value().data()[0];
    let mut grads = g.backward(built.loss)?;
    Ok((loss, bound.leaves.iter().map(|&v| grads.take(v)).collect()))
}

/// Loss only, with gradient tracking off.
pub fn loss_only(
    prepared: &PreparedDoc,
    params: &CferParams,
    config: &CferConfig,
    mode: Mode,
    stream_seed: u64,
) -> Result<f64, ModelError> {
    let g = Graph::new(mode, stream_seed);
    let bound = BoundParams::bind(&g, params, config, false);
    let built = build(&g, &bound, prepared, config, stream_seed)?;
    let loss = built.loss.value().data()[0];
    Ok(loss)
}
