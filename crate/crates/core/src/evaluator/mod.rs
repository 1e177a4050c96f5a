//! Threshold calibration and relation-extraction metrics.

mod ablation;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, RelationVocab};

pub use ablation::{evaluate_checkpoint, run_ablation, AblationRow};
pub use report::{evaluate, BucketF1, EvalReport, RelationCounts};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("fact refers to unknown document {0:?}")]
    UnknownDocument(String),
    #[error("thresholds cover {got} relations, expected {expected}")]
    ThresholdCount { got: usize, expected: usize },
}

/// A relational triple inside one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub doc_id: String,
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

pub type FactSet = BTreeSet<Fact>;

/// Model scores for one candidate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub probabilities: Vec<f64>,
}

/// Relation-specific decision thresholds `δ_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl Thresholds {
    pub const FALLBACK: f64 = 0.5;

    pub fn uniform(relations: &RelationVocab, value: f64) -> Self {
        Self {
            labels: relations.labels().to_vec(),
            values: vec![value; relations.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("relation\tthreshold\n");
        for (l, v) in self.labels.iter().zip(&self.values) {
            out.push_str(&format!("{l}\t{v}\n"));
        }
        out
    }
}

/// Precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From counts, with the empty-set conventions: empty predictions give
    /// precision 1 only when gold is also empty, empty gold gives recall 1
    /// only when predictions are also empty, and F1 is 0 when P + R = 0.
    pub fn from_counts(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let precision = match (n_pred, n_gold) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => tp as f64 / n_pred as f64,
        };
        let recall = match (n_gold, n_pred) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => tp as f64 / n_gold as f64,
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Gold facts of a corpus, relation labels mapped through `relations`.
/// Facts with unknown labels are skipped.
pub fn gold_facts(docs: &[Document], relations: &RelationVocab) -> FactSet {
    docs.iter()
        .flat_map(|d| {
            d.facts.iter().filter_map(|f| {
                relations.get(&f.relation).map(|r| Fact {
                    doc_id: d.doc_id.clone(),
                    head: f.head,
                    relation: r,
                    tail: f.tail,
                })
            })
        })
        .collect()
}

/// Name-keyed training facts: every (head mention surface, relation label,
/// tail mention surface) combination of every training fact.
pub fn train_name_facts(docs: &[Document]) -> BTreeSet<(String, String, String)> {
    let mut out = BTreeSet::new();
    for d in docs {
        for f in &d.facts {
            for hm in &d.entities[f.head].mentions {
                for tm in &d.entities[f.tail].mentions {
                    out.insert((hm.surface.clone(), f.relation.clone(), tm.surface.clone()));
                }
            }
        }
    }
    out
}

/// Candidate thresholds for one relation's scores: midpoints between
/// consecutive distinct sorted scores, the fallback, and one point below
/// and above the whole range.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut cands: Vec<f64> = sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    cands.push(Thresholds::FALLBACK);
    if let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) {
        cands.push(lo / 2.0);
        cands.push((hi + 1.0) / 2.0);
    }
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    cands
}

/// Per-relation thresholds maximizing that relation's F1 on `scored`, ties
/// broken toward the larger threshold. Relations without gold positives
/// get the fallback.
pub fn select_thresholds(
    scored: &[ScoredPair],
    gold: &FactSet,
    relations: &RelationVocab,
) -> Thresholds {
    let n_r = relations.len();
    let mut values = Vec::with_capacity(n_r);
    for r in 0..n_r {
        let mut scores: Vec<(f64, bool)> = scored
            .iter()
            .map(|p| {
                let fact = Fact {
                    doc_id: p.doc_id.clone(),
                    head: p.head,
                    relation: r,
                    tail: p.tail,
                };
                (p.probabilities[r], gold.contains(&fact))
            })
            .collect();
        let n_gold = scores.iter().filter(|s| s.1).count();
        if n_gold == 0 {
            values.push(Thresholds::FALLBACK);
            continue;
        }
        scores.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Suffix sums over ascending scores give counts above any cut.
        let n = scores.len();
        let mut pos_suffix = vec![0usize; n + 1];
        for i in (0..n).rev() {
            pos_suffix[i] = pos_suffix[i + 1] + scores[i].1 as usize;
        }
        let raw: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let mut best = (f64::NEG_INFINITY, Thresholds::FALLBACK);
        for c in threshold_candidates(&raw) {
            let cut = raw.partition_point(|&s| s <= c);
            let f1 = Prf::from_counts(pos_suffix[cut], n - cut, n_gold).f1;
            if f1 >= best.0 {
                best = (f1, c);
            }
        }
        values.push(best.1);
    }
    Thresholds {
        labels: relations.labels().to_vec(),
        values,
    }
}

/// Facts whose probability strictly exceeds the relation threshold.
pub fn decide(scored: &[ScoredPair], thresholds: &Thresholds) -> FactSet {
    let mut out = FactSet::new();
    for p in scored {
        for (r, (&prob, &t)) in p.probabilities.iter().zip(&thresholds.values).enumerate() {
            if prob > t {
                out.insert(Fact {
                    doc_id: p.doc_id.clone(),
                    head: p.head,
                    relation: r,
                    tail: p.tail,
                });
            }
        }
    }
    out
}

pub fn micro_f1(pred: &FactSet, gold: &FactSet) -> Prf {
    Prf::from_counts(pred.intersection(gold).count(), pred.len(), gold.len())
}

fn index(docs: &[Document]) -> HashMap<&str, &Document> {
    docs.iter().map(|d| (d.doc_id.as_str(), d)).collect()
}

fn lookup<'a>(idx: &HashMap<&str, &'a Document>, id: &str) -> Result<&'a Document, EvalError> {
    idx.get(id)
        .copied()
        .ok_or_else(|| EvalError::UnknownDocument(id.to_string()))
}

fn in_train(
    f: &Fact,
    doc: &Document,
    relations: &RelationVocab,
    train: &BTreeSet<(String, String, String)>,
) -> bool {
    let label = relations.label(f.relation).to_string();
    doc.entities[f.head].mentions.iter().any(|hm| {
        doc.entities[f.tail]
            .mentions
            .iter()
            .any(|tm| train.contains(&(hm.surface.clone(), label.clone(), tm.surface.clone())))
    })
}

/// Micro F1 after removing, from both sets, facts whose name-keyed triple
/// appears among the training facts.
pub fn ign_f1(
    pred: &FactSet,
    gold: &FactSet,
    train: &BTreeSet<(String, String, String)>,
    docs: &[Document],
    relations: &RelationVocab,
) -> Result<Prf, EvalError> {
    let idx = index(docs);
    let keep = |set: &FactSet| -> Result<FactSet, EvalError> {
        let mut out = FactSet::new();
        for f in set {
            if !in_train(f, lookup(&idx, &f.doc_id)?, relations, train) {
                out.insert(f.clone());
            }
        }
        Ok(out)
    };
    Ok(micro_f1(&keep(pred)?, &keep(gold)?))
}

fn partition_by<K: Ord>(
    set: &FactSet,
    idx: &HashMap<&str, &Document>,
    key: impl Fn(&Fact, &Document) -> K,
) -> Result<BTreeMap<K, FactSet>, EvalError> {
    let mut out: BTreeMap<K, FactSet> = BTreeMap::new();
    for f in set {
        let doc = lookup(idx, &f.doc_id)?;
        out.entry(key(f, doc)).or_default().insert(f.clone());
    }
    Ok(out)
}

/// `(Intra-F1, Inter-F1)`: a fact is intra-sentence when some sentence
/// mentions both of its entities.
pub fn intra_inter_f1(
    pred: &FactSet,
    gold: &FactSet,
    docs: &[Document],
) -> Result<(Prf, Prf), EvalError> {
    let idx = index(docs);
    let key = |f: &Fact, d: &Document| d.sentence_distance(f.head, f.tail) > 0;
    let p = partition_by(pred, &idx, key)?;
    let g = partition_by(gold, &idx, key)?;
    let empty = FactSet::new();
    let part = |k: bool| micro_f1(p.get(&k).unwrap_or(&empty), g.get(&k).unwrap_or(&empty));
    Ok((part(false), part(true)))
}

pub const DISTANCE_BUCKETS: [&str; 3] = ["[0,4)", "[4,8)", "[8,inf)"];

pub fn distance_bucket(distance: usize) -> usize {
    match distance {
        0..=3 => 0,
        4..=7 => 1,
        _ => 2,
    }
}

/// Micro F1 per sentence-distance bucket.
pub fn distance_bucket_f1(
    pred: &FactSet,
    gold: &FactSet,
    docs: &[Document],
) -> Result<[Prf; 3], EvalError> {
    let idx = index(docs);
    let key = |f: &Fact, d: &Document| distance_bucket(d.sentence_distance(f.head, f.tail));
    let p = partition_by(pred, &idx, key)?;
    let g = partition_by(gold, &idx, key)?;
    let empty = FactSet::new();
    Ok(std::array::from_fn(|b| {
        micro_f1(p.get(&b).unwrap_or(&empty), g.get(&b).unwrap_or(&empty))
    }))
}

/// Relation-frequency categories by upper bounds: with `[20, 100, 500]` the
/// buckets are `(0,20]`, `(20,100]`, `(100,500]`, `(500,∞)`. A relation
/// without gold positives falls into the first bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBuckets {
    pub bounds: Vec<usize>,
}

impl Default for FrequencyBuckets {
    fn default() -> Self {
        Self {
            bounds: vec![20, 100, 500],
        }
    }
}

impl FrequencyBuckets {
    pub fn bucket(&self, count: usize) -> usize {
        self.bounds
            .iter()
            .position(|&b| count <= b)
            .unwrap_or(self.bounds.len())
    }

    pub fn len(&self) -> usize {
        self.bounds.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Vec<String> {
        let mut lo = 0;
        let mut out = Vec::with_capacity(self.len());
        for &b in &self.bounds {
            out.push(format!("({lo},{b}]"));
            lo = b;
        }
        out.push(format!("({lo},inf)"));
        out
    }
}

/// Gold positives per relation.
pub fn relation_counts(gold: &FactSet, n_r: usize) -> Vec<usize> {
    let mut counts = vec![0; n_r];
    for f in gold {
        counts[f.relation] += 1;
    }
    counts
}

/// Micro F1 over facts whose relation falls in each frequency bucket;
/// `None` for buckets that no relation falls into.
pub fn frequency_bucket_f1(
    pred: &FactSet,
    gold: &FactSet,
    counts: &[usize],
    buckets: &FrequencyBuckets,
) -> Vec<Option<Prf>> {
    let rel_bucket: Vec<usize> = counts.iter().map(|&c| buckets.bucket(c)).collect();
    (0..buckets.len())
        .map(|b| {
            if !rel_bucket.contains(&b) {
                return None;
            }
            let sel = |s: &FactSet| -> FactSet {
                s.iter()
                    .filter(|f| rel_bucket.get(f.relation) == Some(&b))
                    .cloned()
                    .collect()
            };
            Some(micro_f1(&sel(pred), &sel(gold)))
        })
        .collect()
}
