use rayon::prelude::*;

use super::{
    adamw_step, ema_update, lr_at, make_batches, Checkpoint, EmaState, OptimState, TrainConfig,
    TrainError,
};
use crate::corpus::{Document, EmbeddingTable, RelationVocab, Vocab};
use crate::evaluator::{decide, gold_facts, micro_f1, select_thresholds, ScoredPair, Thresholds};
use crate::model::{
    forward, loss_and_grads, prepare, CferConfig, CferParams, ModelError, PairOutput, PreparedDoc,
};
use crate::ndiff::{Mode, Tensor};
use crate::seeds::mix_seed;

pub(super) const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5AFF;
const DROPOUT_STREAM: u64 = 0xD209;

/// Training inputs shared by every run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub vocab: Vocab,
    pub relations: RelationVocab,
    pub embedding: Option<EmbeddingTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    /// Dev micro F1 of the EMA weights with refit thresholds, when evaluated.
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State at the epoch with the best dev F1.
    pub best: Checkpoint,
    /// State after the final epoch; resume from this one.
    pub last: Checkpoint,
    pub history: Vec<EpochLog>,
}

pub fn prepare_corpus(
    docs: &[Document],
    vocab: &Vocab,
    relations: &RelationVocab,
    config: &CferConfig,
) -> Result<Vec<PreparedDoc>, ModelError> {
    docs.iter()
        .map(|d| prepare(d, vocab, relations, config))
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, TrainError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))
}

/// Eval-mode outputs per document, aligned with `prepared`; documents
/// without candidate pairs give no outputs.
pub fn score_corpus(
    prepared: &[PreparedDoc],
    params: &CferParams,
    config: &CferConfig,
    workers: usize,
) -> Result<Vec<Vec<PairOutput>>, TrainError> {
    let run = || {
        prepared
            .par_iter()
            .map(|p| {
                if p.pairs.is_empty() {
                    return Ok(Vec::new());
                }
                forward(p, params, config, Mode::Eval, 0).map(|o| o.pairs)
            })
            .collect::<Result<Vec<_>, ModelError>>()
    };
    Ok(pool(workers)?.install(run)?)
}

pub fn to_scored(prepared: &[PreparedDoc], outputs: &[Vec<PairOutput>]) -> Vec<ScoredPair> {
    prepared
        .iter()
        .zip(outputs)
        .flat_map(|(p, outs)| {
            outs.iter().map(|o| ScoredPair {
                doc_id: p.doc_id.clone(),
                head: o.head,
                tail: o.tail,
                probabilities: o.probabilities.clone(),
            })
        })
        .collect()
}

struct State {
    params: CferParams,
    ema: EmaState,
    optim: OptimState,
    epoch: usize,
    best: Option<Checkpoint>,
}

fn snapshot(
    state: &State,
    data: &TrainData,
    tc: &TrainConfig,
    mc: &CferConfig,
    thresholds: Thresholds,
    best: (usize, f64),
) -> Checkpoint {
    Checkpoint {
        model: mc.clone(),
        train: tc.clone(),
        vocab: data.vocab.clone(),
        relations: data.relations.clone(),
        params: state.params.clone(),
        ema: state.ema.clone(),
        optim: state.optim.clone(),
        thresholds,
        epoch: state.epoch,
        best_epoch: best.0,
        best_dev_f1: best.1,
    }
}

fn ema_params(state: &State) -> CferParams {
    let mut p = state.params.clone();
    p.store.restore_values(state.ema.shadow.clone());
    p
}

/// Trains from a fresh initialization derived from `tc.seed`.
pub fn train(
    data: &TrainData,
    tc: &TrainConfig,
    mc: &CferConfig,
) -> Result<TrainOutcome, TrainError> {
    train_until(data, tc, mc, tc.epochs)
}

/// Like `train`, but stops after `until` epochs while keeping the schedule
/// of the full run, so that `resume` can continue it.
pub fn train_until(
    data: &TrainData,
    tc: &TrainConfig,
    mc: &CferConfig,
    until: usize,
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    let params = CferParams::init(
        mc,
        data.vocab.len(),
        data.embedding.as_ref(),
        mix_seed(&[tc.seed, INIT_STREAM]),
    )?;
    let values = params.store.values();
    let state = State {
        ema: EmaState::new(&values, tc.ema_decay),
        optim: OptimState::new(&values),
        params,
        epoch: 0,
        best: None,
    };
    run_epochs(data, tc, mc, state, until.min(tc.epochs))
}

/// Continues the run saved in `last` up to its configured epoch count.
/// `best` is the best checkpoint so far, if any.
pub fn resume(
    data: &TrainData,
    last: Checkpoint,
    best: Option<Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    if last.vocab != data.vocab || last.relations != data.relations {
        return Err(TrainError::Config(
            "checkpoint vocabulary does not match the training data".into(),
        ));
    }
    last.train.validate()?;
    let tc = last.train.clone();
    let mc = last.model.clone();
    let state = State {
        params: last.params,
        ema: last.ema,
        optim: last.optim,
        epoch: last.epoch,
        best,
    };
    run_epochs(data, &tc, &mc, state, tc.epochs)
}

fn run_epochs(
    data: &TrainData,
    tc: &TrainConfig,
    mc: &CferConfig,
    mut state: State,
    until: usize,
) -> Result<TrainOutcome, TrainError> {
    mc.validate()?;
    if data.dev.is_empty() {
        return Err(TrainError::Config("the dev set is empty".into()));
    }
    let train_prep: Vec<PreparedDoc> =
        prepare_corpus(&data.train, &data.vocab, &data.relations, mc)?
            .into_iter()
            .filter(|p| !p.pairs.is_empty())
            .collect();
    if train_prep.is_empty() {
        return Err(TrainError::Config(
            "no training document has a candidate entity pair".into(),
        ));
    }
    let dev_prep = prepare_corpus(&data.dev, &data.vocab, &data.relations, mc)?;
    let dev_gold = gold_facts(&data.dev, &data.relations);
    let per_epoch = train_prep.len().div_ceil(tc.batch_size) as u64;
    let total = per_epoch * tc.epochs as u64;
    let hp = tc.adam();
    let pool = pool(tc.workers)?;
    let mut history = Vec::new();

    while state.epoch < until {
        let batches = make_batches(
            train_prep.len(),
            tc.batch_size,
            mix_seed(&[tc.seed, SHUFFLE_STREAM, state.epoch as u64]),
        );
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in &batches {
            let step = state.optim.step;
            let params = &state.params;
            let results: Vec<Result<(f64, Vec<Tensor>), ModelError>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let seed = mix_seed(&[tc.seed, DROPOUT_STREAM, step, i as u64]);
                        loss_and_grads(&train_prep[i], params, mc, Mode::Train, seed)
                    })
                    .collect()
            });
            let mut loss = 0.0;
            let mut grads: Option<Vec<Tensor>> = None;
            for r in results {
                let (l, g) = r?;
                loss += l;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grads = grads.expect("batches are non-empty");
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            grads.iter_mut().for_each(|g| g.scale_assign(scale));
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(TrainError::NonFinite {
                    step,
                    docs: batch
                        .iter()
                        .map(|&i| train_prep[i].doc_id.clone())
                        .collect(),
                });
            }
            lr = lr_at(step + 1, total, tc.warmup_frac, tc.peak_lr);
            let mut values = state.params.store.take_values();
            let updated = adamw_step(&mut values, &grads, &mut state.optim, lr, &hp)
                .and_then(|()| ema_update(&mut state.ema, &values));
            state.params.store.restore_values(values);
            updated?;
            loss_sum += loss;
        }
        state.epoch += 1;

        let mut dev_f1 = None;
        if state.epoch.is_multiple_of(tc.eval_every) || state.epoch == until {
            let eval = ema_params(&state);
            let outputs = score_corpus(&dev_prep, &eval, mc, tc.workers)?;
            let scored = to_scored(&dev_prep, &outputs);
            let thresholds = select_thresholds(&scored, &dev_gold, &data.relations);
            let f1 = micro_f1(&decide(&scored, &thresholds), &dev_gold).f1;
            dev_f1 = Some(f1);
            if state.best.as_ref().is_none_or(|b| f1 > b.best_dev_f1) {
                state.best = Some(snapshot(
                    &state,
                    data,
                    tc,
                    mc,
                    thresholds,
                    (state.epoch, f1),
                ));
            }
        }
        history.push(EpochLog {
            epoch: state.epoch,
            mean_loss: loss_sum / batches.len() as f64,
            lr,
            dev_f1,
        });
    }

    let best = match state.best.take() {
        Some(b) => b,
        None => return Err(TrainError::Config("no epoch left to run".into())),
    };
    let last = snapshot(
        &state,
        data,
        tc,
        mc,
        best.thresholds.clone(),
        (best.best_epoch, best.best_dev_f1),
    );
    Ok(TrainOutcome {
        best,
        last,
        history,
    })
}
