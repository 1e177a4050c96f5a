use std::fs;
use std::path::{Path, PathBuf};

use cfer::model::{CferConfig, Variant};
use cfer::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Flat run configuration: data paths, model and optimization settings.
/// Every key is optional in the file form; missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// One relation label per line; derived from the training facts when absent.
    pub relations: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub variant: String,
    pub seed: u64,
    pub workers: usize,
    pub min_freq: usize,

    pub d_emb: usize,
    pub d_h: usize,
    pub n_blocks: usize,
    pub sublayers_per_block: usize,
    pub dropout_dcgcn: f64,
    pub dropout_other: f64,
    pub path_cap: Option<usize>,

    pub peak_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_frac: f64,
    pub ema_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = CferConfig::full_size(1);
        let t = TrainConfig::default();
        Self {
            train: None,
            dev: None,
            test: None,
            relations: None,
            embeddings: None,
            checkpoint: None,
            output_dir: None,
            variant: Variant::Full.name().to_string(),
            seed: t.seed,
            workers: t.workers,
            min_freq: 1,
            d_emb: m.d_emb,
            d_h: m.d_h,
            n_blocks: m.n_blocks,
            sublayers_per_block: m.sublayers_per_block,
            dropout_dcgcn: m.dropout_dcgcn,
            dropout_other: m.dropout_other,
            path_cap: m.path_cap,
            peak_lr: t.peak_lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            warmup_frac: t.warmup_frac,
            ema_decay: t.ema_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            eval_every: t.eval_every,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        Ok(self.variant.parse()?)
    }

    pub fn model_config(&self, n_r: usize) -> Result<CferConfig, CliError> {
        let config = CferConfig {
            d_emb: self.d_emb,
            d_h: self.d_h,
            n_blocks: self.n_blocks,
            sublayers_per_block: self.sublayers_per_block,
            n_r,
            dropout_dcgcn: self.dropout_dcgcn,
            dropout_other: self.dropout_other,
            path_cap: self.path_cap,
            ablation: self.variant()?.flags(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let config = TrainConfig {
            peak_lr: self.peak_lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_frac: self.warmup_frac,
            ema_decay: self.ema_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            weight_decay: self.weight_decay,
            seed: self.seed,
            workers: self.workers,
            eval_every: self.eval_every,
        };
        config.validate()?;
        Ok(config)
    }

    /// Fails on the first configured input path that does not exist.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        for p in [
            &self.train,
            &self.dev,
            &self.test,
            &self.relations,
            &self.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(CliError::MissingPath(p.clone()));
            }
        }
        Ok(())
    }
}
