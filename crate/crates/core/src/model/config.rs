use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Attention,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    All,
    SingleRandom,
}

/// Component switches for the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_fine: bool,
    pub use_coarse_repr: bool,
    pub use_dcgcn: bool,
    pub aggregator: Aggregator,
    pub paths: PathMode,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Variant::Full.flags()
    }
}

impl AblationFlags {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.use_fine && !self.use_coarse_repr {
            return Err(ModelError::Config(
                "at least one of use_fine / use_coarse_repr must be set".into(),
            ));
        }
        Ok(())
    }
}

/// The full model and the six ablated variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    MeanAggregator,
    SinglePath,
    NoFine,
    NoCoarse,
    NoDcgcn,
    NoBoth,
}

impl Variant {
    pub const ABLATIONS: [Variant; 6] = [
        Variant::MeanAggregator,
        Variant::SinglePath,
        Variant::NoFine,
        Variant::NoCoarse,
        Variant::NoDcgcn,
        Variant::NoBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MeanAggregator => "mean-aggregator",
            Variant::SinglePath => "single-path",
            Variant::NoFine => "no-fine",
            Variant::NoCoarse => "no-coarse",
            Variant::NoDcgcn => "no-dcgcn",
            Variant::NoBoth => "no-both",
        }
    }

    /// Row label as used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "CFER (full)",
            Variant::MeanAggregator => "- Attention Aggregator",
            Variant::SinglePath => "- Multiple Paths",
            Variant::NoFine => "- Fine-level Repr.",
            Variant::NoCoarse => "- Coarse-level Repr.",
            Variant::NoDcgcn => "- DCGCN Blocks",
            Variant::NoBoth => "- Both-level Modules",
        }
    }

    pub fn flags(self) -> AblationFlags {
        let full = AblationFlags {
            use_fine: true,
            use_coarse_repr: true,
            use_dcgcn: true,
            aggregator: Aggregator::Attention,
            paths: PathMode::All,
        };
        match self {
            Variant::Full => full,
            Variant::MeanAggregator => AblationFlags {
                aggregator: Aggregator::Mean,
                ..full
            },
            Variant::SinglePath => AblationFlags {
                paths: PathMode::SingleRandom,
                ..full
            },
            Variant::NoFine => AblationFlags {
                use_fine: false,
                ..full
            },
            Variant::NoCoarse => AblationFlags {
                use_coarse_repr: false,
                ..full
            },
            Variant::NoDcgcn => AblationFlags {
                use_dcgcn: false,
                ..full
            },
            Variant::NoBoth => AblationFlags {
                use_fine: false,
                use_dcgcn: false,
                ..full
            },
        }
    }

    /// Whether the variant reduces to a plain sequence-encoder baseline.
    pub fn is_degenerate_baseline(self) -> bool {
        matches!(self, Variant::NoBoth)
    }

    pub fn valid_names() -> Vec<&'static str> {
        std::iter::once(Variant::Full)
            .chain(Variant::ABLATIONS)
            .map(Variant::name)
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        std::iter::once(Variant::Full)
            .chain(Variant::ABLATIONS)
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                ModelError::Config(format!(
                    "unknown variant {s:?}; valid variants: {}",
                    Variant::valid_names().join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CferConfig {
    pub d_emb: usize,
    /// Hidden width `d_h`.
    pub d_h: usize,
    pub n_blocks: usize,
    pub sublayers_per_block: usize,
    pub n_r: usize,
    pub dropout_dcgcn: f64,
    pub dropout_other: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_cap: Option<usize>,
    #[serde(default)]
    pub ablation: AblationFlags,
}

impl CferConfig {
    /// Word-vector track defaults: 300-d embeddings and hidden size, two
    /// blocks of four sub-layers, dropout 0.4 in DCGCN and 0.2 elsewhere.
    pub fn full_size(n_r: usize) -> Self {
        Self {
            d_emb: 300,
            d_h: 300,
            n_blocks: 2,
            sublayers_per_block: 4,
            n_r,
            dropout_dcgcn: 0.4,
            dropout_other: 0.2,
            path_cap: None,
            ablation: AblationFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.n_blocks < 1 {
            return err("n_blocks must be at least 1".into());
        }
        if self.sublayers_per_block < 1 || !self.d_h.is_multiple_of(self.sublayers_per_block) {
            return err(format!(
                "d_h ({}) must be divisible by sublayers_per_block ({})",
                self.d_h, self.sublayers_per_block
            ));
        }
        if self.d_h == 0 || !self.d_h.is_multiple_of(2) {
            return err(format!("d_h ({}) must be even and positive", self.d_h));
        }
        if self.d_emb == 0 || self.n_r == 0 {
            return err("d_emb and n_r must be positive".into());
        }
        for (name, r) in [
            ("dropout_dcgcn", self.dropout_dcgcn),
            ("dropout_other", self.dropout_other),
        ] {
            if !(0.0..1.0).contains(&r) {
                return err(format!("{name} = {r} outside [0, 1)"));
            }
        }
        if self.path_cap == Some(0) {
            return err("path_cap must be positive".into());
        }
        self.ablation.validate()
    }

    /// Width of one sub-layer output, `d_h / m_k`.
    pub fn sublayer_width(&self) -> usize {
        self.d_h / self.sublayers_per_block
    }

    /// Input width of sub-layer `l` (1-based): `d_h + (l - 1)·d_h/m_k`.
    pub fn sublayer_input_width(&self, l: usize) -> usize {
        self.d_h + (l - 1) * self.sublayer_width()
    }
}
