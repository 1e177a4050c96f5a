use serde::Serialize;

use super::{evaluate, train_name_facts, EvalReport, FrequencyBuckets, Thresholds};
use crate::corpus::Document;
use crate::model::{CferConfig, Variant};
use crate::trainer::{
    prepare_corpus, score_corpus, to_scored, train, Checkpoint, TrainConfig, TrainData, TrainError,
};

/// Scores `docs` with the checkpoint's EMA weights and reports every metric.
/// `thresholds` overrides the stored thresholds when given.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    docs: &[Document],
    train_docs: &[Document],
    thresholds: Option<&Thresholds>,
    workers: usize,
) -> Result<EvalReport, TrainError> {
    let prepared = prepare_corpus(docs, &ckpt.vocab, &ckpt.relations, &ckpt.model)?;
    let outputs = score_corpus(&prepared, &ckpt.eval_params(), &ckpt.model, workers)?;
    let scored = to_scored(&prepared, &outputs);
    Ok(evaluate(
        &scored,
        docs,
        &ckpt.relations,
        thresholds.unwrap_or(&ckpt.thresholds),
        &train_name_facts(train_docs),
        &FrequencyBuckets::default(),
    )?)
}

/// One row of the ablation table.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub label: String,
    pub f1: f64,
    /// F1 minus the full model's F1.
    pub delta: f64,
    pub degenerate_baseline: bool,
    pub report: EvalReport,
}

impl AblationRow {
    /// `label  F1  (delta)` with F1 in percent.
    pub fn to_tsv_row(&self) -> String {
        let mut row = format!(
            "{}\t{:.2}\t({:+.2})",
            self.label,
            100.0 * self.f1,
            100.0 * self.delta
        );
        if self.degenerate_baseline {
            row.push_str("\tdegenerate baseline");
        }
        row
    }
}

/// Trains `variant` on `data.train`, evaluates its best checkpoint on
/// `data.dev`, and compares with the full model. The full model is trained
/// too unless its dev F1 is given.
pub fn run_ablation(
    variant: Variant,
    data: &TrainData,
    tc: &TrainConfig,
    base: &CferConfig,
    full_f1: Option<f64>,
) -> Result<AblationRow, TrainError> {
    let run = |v: Variant| -> Result<EvalReport, TrainError> {
        let config = CferConfig {
            ablation: v.flags(),
            ..base.clone()
        };
        let outcome = train(data, tc, &config)?;
        evaluate_checkpoint(&outcome.best, &data.dev, &data.train, None, tc.workers)
    };
    let report = run(variant)?;
    let reference = match (variant, full_f1) {
        (Variant::Full, _) => report.f1,
        (_, Some(f)) => f,
        (_, None) => run(Variant::Full)?.f1,
    };
    Ok(AblationRow {
        variant: variant.name().to_string(),
        label: variant.label().to_string(),
        f1: report.f1,
        delta: report.f1 - reference,
        degenerate_baseline: variant.is_degenerate_baseline(),
        report,
    })
}
