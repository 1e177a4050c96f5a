//! Python bindings: the command-line interface as a function, plus direct
//! access to graph construction, metrics, the schedule and the gradient
//! check.

use cfer::corpus::parse_dataset_with;
use cfer::docgraph::build_graph;
use cfer::evaluator::{micro_f1, Fact, FactSet};
use cfer::model::{gradcheck_tiny, GRADCHECK_SEED};
use cfer::ndiff::DEFAULT_EPS;
use cfer_cli::Cli;
use clap::Parser;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Runs `cfer <args>` in-process and returns its standard output.
#[pyfunction]
fn run_cli(args: Vec<String>) -> PyResult<String> {
    let cli = Cli::try_parse_from(std::iter::once("cfer".to_string()).chain(args))
        .map_err(value_error)?;
    let mut out = Vec::new();
    cfer_cli::run(&cli, &mut out).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(String::from_utf8_lossy(&out).into_owned())
}

type LabeledEdge = (usize, usize, &'static str);

/// Labeled edges `(u, v, kind)` of every document in a JSON dataset.
#[pyfunction]
fn graph_edges(dataset_json: &str) -> PyResult<Vec<Vec<LabeledEdge>>> {
    let docs = parse_dataset_with(dataset_json, None).map_err(value_error)?;
    Ok(docs
        .iter()
        .map(|d| {
            build_graph(d)
                .edges
                .into_iter()
                .map(|(u, v, k)| (u, v, k.short_name()))
                .collect()
        })
        .collect())
}

type Triple = (String, usize, usize, usize);

/// Micro precision, recall and F1 of `(doc_id, head, relation, tail)` sets.
#[pyfunction]
fn micro_prf(pred: Vec<Triple>, gold: Vec<Triple>) -> (f64, f64, f64) {
    let set = |v: Vec<Triple>| -> FactSet {
        v.into_iter()
            .map(|(doc_id, head, relation, tail)| Fact {
                doc_id,
                head,
                relation,
                tail,
            })
            .collect()
    };
    let p = micro_f1(&set(pred), &set(gold));
    (p.precision, p.recall, p.f1)
}

/// Learning rate of the warmup-then-linear-decay schedule at `step`.
#[pyfunction]
#[pyo3(signature = (step, total, warmup_frac = 0.1, peak = 1e-3))]
fn lr_at(step: u64, total: u64, warmup_frac: f64, peak: f64) -> f64 {
    cfer::trainer::lr_at(step, total, warmup_frac, peak)
}

/// Maximum relative gradient error on the tiny configuration.
#[pyfunction]
#[pyo3(signature = (seed = GRADCHECK_SEED, eps = DEFAULT_EPS))]
fn gradcheck(seed: u64, eps: f64) -> PyResult<f64> {
    gradcheck_tiny(seed, eps, false)
        .map(|r| r.max_rel_error)
        .map_err(value_error)
}

#[pymodule]
fn pycfer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(graph_edges, m)?)?;
    m.add_function(wrap_pyfunction!(micro_prf, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
