//! Subcommands of the `cfer` binary.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cfer::corpus::{
    build_vocab, load_dataset, load_dataset_with, load_embeddings, load_relation_vocab,
    save_dataset, save_relation_vocab, CorpusError, Document, RelationVocab,
};
use cfer::docgraph::graph_stats;
use cfer::evaluator::{evaluate_checkpoint, run_ablation, EvalError, Thresholds};
use cfer::model::{gradcheck_tiny, prepare, ModelError, GRADCHECK_SEED};
use cfer::ndiff::DEFAULT_EPS;
use cfer::synthetic::{planted_corpus, planted_relations};
use cfer::trainer::{resume, score_corpus, train_until, Checkpoint, TrainData, TrainError};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

/// Tolerance of the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("input path does not exist: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("{path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("gradient check failed: max relative error {0:.3e} >= {GRADCHECK_TOLERANCE:e}")]
    GradcheckFailed(f64),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

#[derive(Debug, Parser)]
#[command(
    name = "cfer",
    version,
    about = "Coarse-to-fine document-level relation extraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes the best-dev checkpoint and the final state.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Write predicted facts and path attention weights.
    Predict(PredictArgs),
    /// Edge counts and path-length statistics of a dataset.
    Graph(GraphArgs),
    /// End-to-end gradient check on a tiny configuration.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one ablated variant against the full model.
    Ablate(AblateArgs),
    /// Generate a planted synthetic corpus.
    Synth(SynthArgs),
}

/// Settings shared by the training subcommands; flags override the file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Relation label file, one label per line.
    #[arg(long)]
    pub relations: Option<PathBuf>,
    /// Word vectors, `token v1 ... vd` per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// full, mean-aggregator, single-path, no-fine, no-coarse, no-dcgcn, no-both
    #[arg(long)]
    pub variant: Option<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let paths = [
            (&self.train, &mut rc.train),
            (&self.dev, &mut rc.dev),
            (&self.test, &mut rc.test),
            (&self.relations, &mut rc.relations),
            (&self.embeddings, &mut rc.embeddings),
        ];
        for (flag, slot) in paths {
            if let Some(p) = flag {
                *slot = Some(p.clone());
            }
        }
        if let Some(s) = self.seed {
            rc.seed = s;
        }
        if let Some(w) = self.workers {
            rc.workers = w;
        }
        if let Some(e) = self.epochs {
            rc.epochs = e;
        }
        if let Some(v) = &self.variant {
            rc.variant = v.clone();
        }
        rc.variant()?;
        rc.check_inputs()?;
        Ok(rc)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint path; the final state goes to `<out>.last`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a `.last` checkpoint.
    #[arg(long, conflicts_with = "stop_after")]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs, keeping the schedule of the full run so
    /// that `--resume` can finish it.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Labeled dataset to evaluate.
    #[arg(long, visible_alias = "data")]
    pub test: PathBuf,
    /// Training dataset, for Ign F1.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Global threshold, or a `relation<TAB>threshold` file.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, visible_alias = "data")]
    pub test: PathBuf,
    /// Output directory for predictions.tsv and attention.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long, visible_alias = "data")]
    pub test: PathBuf,
    #[arg(long)]
    pub relations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Parameter initialization seed.
    #[arg(long, default_value_t = GRADCHECK_SEED)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Dev F1 of the full model; trained when absent.
    #[arg(long)]
    pub full_f1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for train.json, dev.json and relations.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub docs: usize,
    #[arg(long, default_value_t = 20)]
    pub dev_docs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Graph(a) => cmd_graph(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, CliError> {
    p.as_ref()
        .ok_or_else(|| CliError::Config(format!("no {what} dataset given")))
}

fn check_exists(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPath(p.to_path_buf()))
    }
}

fn relation_vocab(rc: &RunConfig) -> Result<RelationVocab, CliError> {
    match &rc.relations {
        Some(p) => Ok(load_relation_vocab(p)?),
        None => Ok(RelationVocab::from_documents(&load_dataset_with(
            require(&rc.train, "training")?,
            None,
        )?)),
    }
}

fn train_data(rc: &RunConfig) -> Result<(TrainData, usize), CliError> {
    let train_path = require(&rc.train, "training")?;
    let dev_path = require(&rc.dev, "dev")?;
    let relations = relation_vocab(rc)?;
    let train_docs = load_dataset(train_path, &relations)?;
    let dev = load_dataset(dev_path, &relations)?;
    let vocab = build_vocab(&train_docs, rc.min_freq.max(1));
    let embedding = match &rc.embeddings {
        Some(p) => Some(load_embeddings(p, &vocab, rc.d_emb, rc.seed)?),
        None => None,
    };
    let n_r = relations.len();
    Ok((
        TrainData {
            train: train_docs,
            dev,
            vocab,
            relations,
            embedding,
        },
        n_r,
    ))
}

fn last_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".last");
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rc = a.run.resolve()?;
    let ckpt_path = a
        .out
        .clone()
        .or_else(|| rc.checkpoint.clone())
        .ok_or_else(|| {
            CliError::Config(
                "no checkpoint path given (--out or `checkpoint` in the config)".into(),
            )
        })?;
    let (data, n_r) = train_data(&rc)?;
    let outcome = match &a.resume {
        Some(p) => {
            let last = Checkpoint::load(p)?;
            let best = if ckpt_path.exists() {
                Some(Checkpoint::load(&ckpt_path)?)
            } else {
                None
            };
            resume(&data, last, best)?
        }
        None => {
            let tc = rc.train_config()?;
            let until = a.stop_after.unwrap_or(tc.epochs);
            train_until(&data, &tc, &rc.model_config(n_r)?, until)?
        }
    };
    outcome.best.save(&ckpt_path)?;
    outcome.last.save(&last_path(&ckpt_path))?;
    writeln!(out, "epoch\tmean_loss\tlr\tdev_f1")?;
    for h in &outcome.history {
        let f1 = h
            .dev_f1
            .map(|f| format!("{f:.6}"))
            .unwrap_or_else(|| "-".into());
        writeln!(out, "{}\t{:.6}\t{:.3e}\t{f1}", h.epoch, h.mean_loss, h.lr)?;
    }
    writeln!(out, "best_epoch\t{}", outcome.best.best_epoch)?;
    let report = evaluate_checkpoint(&outcome.best, &data.dev, &data.train, None, rc.workers)?;
    writeln!(out, "\n{}\n{}", report.to_tsv(), report.to_json())?;
    Ok(())
}

/// A number is a global threshold; anything else names a threshold file.
fn parse_thresholds(arg: &str, relations: &RelationVocab) -> Result<Thresholds, CliError> {
    if let Ok(v) = arg.parse::<f64>() {
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::Config(format!("threshold {v} is outside (0, 1)")));
        }
        return Ok(Thresholds::uniform(relations, v));
    }
    let path = Path::new(arg);
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut t = Thresholds::uniform(relations, Thresholds::FALLBACK);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (label, value) = line.split_once('\t').ok_or_else(|| {
            CliError::Config(format!(
                "{arg}: expected `relation<TAB>threshold`, got {line:?}"
            ))
        })?;
        if label == "relation" {
            continue;
        }
        let r = relations
            .get(label)
            .ok_or_else(|| CliError::Config(format!("{arg}: unknown relation {label:?}")))?;
        t.values[r] = value
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{arg}: bad threshold {value:?}")))?;
    }
    Ok(t)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_exists(&a.test)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let docs = load_dataset(&a.test, &ckpt.relations)?;
    let train_docs = match &a.train {
        Some(p) => load_dataset(p, &ckpt.relations)?,
        None => Vec::new(),
    };
    let thresholds = a
        .thresholds
        .as_deref()
        .map(|s| parse_thresholds(s, &ckpt.relations))
        .transpose()?;
    let report = evaluate_checkpoint(&ckpt, &docs, &train_docs, thresholds.as_ref(), a.workers)?;
    writeln!(out, "{}\n{}", report.to_tsv(), report.to_json())?;
    Ok(())
}

/// Predicted facts and attention weights as TSV text.
pub fn predict_tables(
    ckpt: &Checkpoint,
    docs: &[Document],
    thresholds: &Thresholds,
    workers: usize,
) -> Result<(String, String), CliError> {
    let prepared = docs
        .iter()
        .map(|d| prepare(d, &ckpt.vocab, &ckpt.relations, &ckpt.model))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = score_corpus(&prepared, &ckpt.eval_params(), &ckpt.model, workers)?;
    let mut facts = String::from("doc_id\thead\trelation\ttail\tprobability\n");
    let mut attention = String::from("doc_id\thead\ttail\tpath\talpha\n");
    for (p, outs) in prepared.iter().zip(&outputs) {
        for o in outs {
            for (r, (&prob, &t)) in o.probabilities.iter().zip(&thresholds.values).enumerate() {
                if prob > t {
                    let label = ckpt.relations.label(r);
                    facts.push_str(&format!(
                        "{}\t{}\t{label}\t{}\t{prob}\n",
                        p.doc_id, o.head, o.tail
                    ));
                }
            }
            for (path, alpha) in o.paths.iter().zip(&o.attention) {
                let nodes: Vec<String> = path.nodes.iter().map(usize::to_string).collect();
                attention.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{alpha}\n",
                    p.doc_id,
                    o.head,
                    o.tail,
                    nodes.join(",")
                ));
            }
        }
    }
    Ok((facts, attention))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_exists(&a.test)?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let docs = load_dataset(&a.test, &ckpt.relations)?;
    let thresholds = match a.thresholds.as_deref() {
        Some(s) => parse_thresholds(s, &ckpt.relations)?,
        None => ckpt.thresholds.clone(),
    };
    let (facts, attention) = predict_tables(&ckpt, &docs, &thresholds, a.workers)?;
    fs::create_dir_all(&a.out).map_err(|source| CliError::Io {
        path: a.out.clone(),
        source,
    })?;
    write_file(&a.out.join("predictions.tsv"), &facts)?;
    write_file(&a.out.join("attention.tsv"), &attention)?;
    writeln!(
        out,
        "documents\t{}\npredicted_facts\t{}",
        docs.len(),
        facts.lines().count() - 1
    )?;
    Ok(())
}

fn cmd_graph(a: &GraphArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_exists(&a.test)?;
    let docs = match &a.relations {
        Some(p) => load_dataset(&a.test, &load_relation_vocab(p)?)?,
        None => load_dataset_with(&a.test, None)?,
    };
    write!(out, "{}", graph_stats(&docs).to_tsv())?;
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = gradcheck_tiny(a.seed, a.eps, a.corrupt_backward)?;
    write!(out, "{}", report.to_tsv())?;
    let pass = report.passes(GRADCHECK_TOLERANCE);
    writeln!(out, "{}", if pass { "PASS" } else { "FAIL" })?;
    if pass {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed(report.max_rel_error))
    }
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rc = a.run.resolve()?;
    let variant = rc.variant()?;
    let (data, n_r) = train_data(&rc)?;
    let row = run_ablation(
        variant,
        &data,
        &rc.train_config()?,
        &rc.model_config(n_r)?,
        a.full_f1,
    )?;
    writeln!(
        out,
        "variant\tf1\tdelta\n{}\n\n{}",
        row.to_tsv_row(),
        row.report.to_tsv()
    )?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    fs::create_dir_all(&a.out).map_err(|source| CliError::Io {
        path: a.out.clone(),
        source,
    })?;
    let train_docs = planted_corpus(a.docs, a.seed);
    let dev = planted_corpus(a.dev_docs, a.seed.wrapping_add(1));
    save_dataset(&a.out.join("train.json"), &train_docs)?;
    save_dataset(&a.out.join("dev.json"), &dev)?;
    save_relation_vocab(&a.out.join("relations.txt"), &planted_relations())?;
    writeln!(out, "train\t{}\ndev\t{}", train_docs.len(), dev.len())?;
    Ok(())
}
