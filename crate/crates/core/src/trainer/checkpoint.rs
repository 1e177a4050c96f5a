use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmaState, OptimState, TrainConfig, TrainError};
use crate::corpus::{RelationVocab, Vocab};
use crate::evaluator::Thresholds;
use crate::model::{CferConfig, CferParams, ParamStore};
use crate::ndiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CFERCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const EMA_PREFIX: &str = "ema/";
const M_PREFIX: &str = "adam_m/";
const V_PREFIX: &str = "adam_v/";

/// Everything needed to evaluate or resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CferConfig,
    pub train: TrainConfig,
    pub vocab: Vocab,
    pub relations: RelationVocab,
    pub params: CferParams,
    /// Shadow tensors in parameter order.
    pub ema: EmaState,
    pub optim: OptimState,
    pub thresholds: Thresholds,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: CferConfig,
    train: TrainConfig,
    vocab: Vec<String>,
    relations: Vec<String>,
    thresholds: Vec<(String, f64)>,
    ema_decay: f64,
    step: u64,
    epoch: usize,
    best_epoch: usize,
    best_dev_f1: f64,
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| TrainError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self) -> Result<(String, Tensor), TrainError> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| TrainError::Format(e.to_string()))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel =
            numel.ok_or_else(|| TrainError::Format(format!("tensor {name} is too large")))?;
        let bytes = self.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| TrainError::Format("size overflow".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| TrainError::Format(e.to_string()))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    /// Binary encoding: magic, version, length-prefixed JSON header, then
    /// named tensors as (name, shape, row-major little-endian doubles).
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            vocab: self.vocab.tokens().to_vec(),
            relations: self.relations.labels().to_vec(),
            thresholds: self
                .thresholds
                .labels
                .iter()
                .cloned()
                .zip(self.thresholds.values.iter().copied())
                .collect(),
            ema_decay: self.ema.decay,
            step: self.optim.step,
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            best_dev_f1: self.best_dev_f1,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u64(&mut out, json.len() as u64);
        out.extend_from_slice(&json);
        let names = self.params.store.names();
        put_u64(&mut out, 4 * names.len() as u64);
        for (name, t) in self.params.store.iter() {
            put_tensor(&mut out, name, t);
        }
        for (prefix, ts) in [
            (EMA_PREFIX, &self.ema.shadow),
            (M_PREFIX, &self.optim.m),
            (V_PREFIX, &self.optim.v),
        ] {
            for (name, t) in names.iter().zip(ts) {
                put_tensor(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(TrainError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(n)?)
            .map_err(|e| TrainError::Format(format!("header: {e}")))?;
        let count = r.u64()? as usize;
        let mut plain = ParamStore::new();
        let mut prefixed: HashMap<String, Tensor> = HashMap::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            if [EMA_PREFIX, M_PREFIX, V_PREFIX]
                .iter()
                .any(|p| name.starts_with(p))
            {
                prefixed.insert(name, t);
            } else {
                plain
                    .insert(name, t)
                    .map_err(|e| TrainError::Format(e.to_string()))?;
            }
        }
        if r.pos != buf.len() {
            return Err(TrainError::Format("trailing bytes".into()));
        }
        let vocab = Vocab::from_tokens(header.vocab);
        let relations =
            RelationVocab::new(header.relations).map_err(|e| TrainError::Format(e.to_string()))?;
        header.model.validate()?;
        let names = plain.names();
        let params = CferParams::from_store(&header.model, vocab.len(), plain)?;
        let mut pick = |prefix: &str| -> Result<Vec<Tensor>, TrainError> {
            names
                .iter()
                .map(|n| {
                    let key = format!("{prefix}{n}");
                    prefixed
                        .remove(&key)
                        .ok_or_else(|| TrainError::Format(format!("missing tensor {key}")))
                })
                .collect()
        };
        let shadow = pick(EMA_PREFIX)?;
        let m = pick(M_PREFIX)?;
        let v = pick(V_PREFIX)?;
        let (labels, values) = header.thresholds.into_iter().unzip();
        Ok(Self {
            model: header.model,
            train: header.train,
            vocab,
            relations,
            params,
            ema: EmaState {
                shadow,
                decay: header.ema_decay,
            },
            optim: OptimState {
                m,
                v,
                step: header.step,
            },
            thresholds: Thresholds { labels, values },
            epoch: header.epoch,
            best_epoch: header.best_epoch,
            best_dev_f1: header.best_dev_f1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_bytes()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let buf = fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }

    /// Parameters with the EMA shadow swapped in; used for evaluation.
    pub fn eval_params(&self) -> CferParams {
        let mut p = self.params.clone();
        p.store
            .set_values(self.ema.shadow.clone())
            .expect("shadow mirrors parameters");
        p
    }
}
