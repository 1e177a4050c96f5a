use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{
    decide, distance_bucket_f1, frequency_bucket_f1, gold_facts, ign_f1, intra_inter_f1, micro_f1,
    relation_counts, EvalError, FrequencyBuckets, Prf, ScoredPair, Thresholds, DISTANCE_BUCKETS,
};
use crate::corpus::{Document, RelationVocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCounts {
    pub relation: String,
    pub threshold: f64,
    pub gold: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketF1 {
    pub bucket: String,
    /// Absent when no relation falls in the bucket.
    pub metrics: Option<Prf>,
}

/// Full metric suite for one scored corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_f1: f64,
    pub intra_f1: f64,
    pub inter_f1: f64,
    pub n_pred: usize,
    pub n_gold: usize,
    pub per_relation: Vec<RelationCounts>,
    pub distance_buckets: Vec<BucketF1>,
    pub frequency_buckets: Vec<BucketF1>,
}

/// Applies `thresholds` to `scored` and computes every metric against the
/// gold facts of `docs`. `train_names` holds name-keyed training facts.
pub fn evaluate(
    scored: &[ScoredPair],
    docs: &[Document],
    relations: &RelationVocab,
    thresholds: &Thresholds,
    train_names: &BTreeSet<(String, String, String)>,
    buckets: &FrequencyBuckets,
) -> Result<EvalReport, EvalError> {
    if thresholds.len() != relations.len() {
        return Err(EvalError::ThresholdCount {
            got: thresholds.len(),
            expected: relations.len(),
        });
    }
    let gold = gold_facts(docs, relations);
    let pred = decide(scored, thresholds);
    let overall = micro_f1(&pred, &gold);
    let ign = ign_f1(&pred, &gold, train_names, docs, relations)?;
    let (intra, inter) = intra_inter_f1(&pred, &gold, docs)?;
    let dist = distance_bucket_f1(&pred, &gold, docs)?;
    let counts = relation_counts(&gold, relations.len());
    let freq = frequency_bucket_f1(&pred, &gold, &counts, buckets);

    let per_relation = (0..relations.len())
        .map(|r| {
            let tp = pred
                .iter()
                .filter(|f| f.relation == r && gold.contains(f))
                .count();
            let n_pred = pred.iter().filter(|f| f.relation == r).count();
            RelationCounts {
                relation: relations.label(r).to_string(),
                threshold: thresholds.values[r],
                gold: counts[r],
                tp,
                fp: n_pred - tp,
                fn_: counts[r] - tp,
            }
        })
        .collect();
    Ok(EvalReport {
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        ign_f1: ign.f1,
        intra_f1: intra.f1,
        inter_f1: inter.f1,
        n_pred: pred.len(),
        n_gold: gold.len(),
        per_relation,
        distance_buckets: DISTANCE_BUCKETS
            .iter()
            .zip(dist)
            .map(|(b, m)| BucketF1 {
                bucket: b.to_string(),
                metrics: Some(m),
            })
            .collect(),
        frequency_buckets: buckets
            .labels()
            .into_iter()
            .zip(freq)
            .map(|(bucket, metrics)| BucketF1 { bucket, metrics })
            .collect(),
    })
}

fn fmt_opt(m: &Option<Prf>) -> String {
    m.map(|p| format!("{:.6}", p.f1))
        .unwrap_or_else(|| "NA".into())
}

impl EvalReport {
    /// Tab-separated `section  key  value` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("section\tkey\tvalue\n");
        for (k, v) in [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("ign_f1", self.ign_f1),
            ("intra_f1", self.intra_f1),
            ("inter_f1", self.inter_f1),
        ] {
            out.push_str(&format!("overall\t{k}\t{v:.6}\n"));
        }
        out.push_str(&format!(
            "overall\tn_pred\t{}\noverall\tn_gold\t{}\n",
            self.n_pred, self.n_gold
        ));
        for b in &self.distance_buckets {
            out.push_str(&format!(
                "distance\t{}\t{}\n",
                b.bucket,
                fmt_opt(&b.metrics)
            ));
        }
        for b in &self.frequency_buckets {
            out.push_str(&format!(
                "frequency\t{}\t{}\n",
                b.bucket,
                fmt_opt(&b.metrics)
            ));
        }
        for r in &self.per_relation {
            out.push_str(&format!(
                "relation\t{}\tthreshold={:.6} gold={} tp={} fp={} fn={}\n",
                r.relation, r.threshold, r.gold, r.tp, r.fp, r.fn_
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
