use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CferConfig, ModelError};
use crate::corpus::EmbeddingTable;
use crate::ndiff::{gru_shapes, Graph, GruVars, Tensor, Var};
use crate::seeds::mix_seed;

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), ModelError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(ModelError::Config(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.tensors.values().cloned().collect()
    }

    /// Replaces all values, in registration order.
    pub fn set_values(&mut self, values: Vec<Tensor>) -> Result<(), ModelError> {
        if values.len() != self.tensors.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                values.len()
            )));
        }
        for ((name, slot), v) in self.tensors.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name}: shape {:?} != {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
            *slot = v;
        }
        Ok(())
    }

    /// Moves the tensors out, leaving empty placeholders until
    /// `restore_values` is called.
    pub(crate) fn take_values(&mut self) -> Vec<Tensor> {
        self.tensors
            .values_mut()
            .map(|t| std::mem::replace(t, Tensor::zeros(&[0])))
            .collect()
    }

    pub(crate) fn restore_values(&mut self, values: Vec<Tensor>) {
        debug_assert_eq!(values.len(), self.tensors.len());
        for (slot, v) in self.tensors.values_mut().zip(values) {
            *slot = v;
        }
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Expected `(name, shape)` list of every model parameter.
pub fn param_shapes(config: &CferConfig, vocab_size: usize) -> Vec<(String, Vec<usize>)> {
    let d = config.d_h;
    let half = d / 2;
    let w = config.sublayer_width();
    let mut out = vec![("embedding".to_string(), vec![vocab_size, config.d_emb])];
    for dir in ["fwd", "bwd"] {
        for (n, s) in gru_shapes(config.d_emb, half) {
            out.push((format!("text.{dir}.{n}"), s));
        }
    }
    for k in 0..config.n_blocks {
        for l in 1..=config.sublayers_per_block {
            out.push((
                format!("dcgcn.{k}.{l}.w"),
                vec![w, config.sublayer_input_width(l)],
            ));
            out.push((format!("dcgcn.{k}.{l}.b"), vec![w]));
        }
        out.push((format!("dcgcn.{k}.out.w"), vec![d, d]));
        out.push((format!("dcgcn.{k}.out.b"), vec![d]));
    }
    for dir in ["fwd", "bwd"] {
        for (n, s) in gru_shapes(d, d) {
            out.push((format!("path.{dir}.{n}"), s));
        }
    }
    out.push(("attn.w".into(), vec![1, 4 * d]));
    out.push(("attn.b".into(), vec![1]));
    out.push(("bilinear.w".into(), vec![2 * d, config.n_r, 2 * d]));
    out.push(("bilinear.b".into(), vec![config.n_r]));
    out
}

fn xavier(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let (fan_in, fan_out) = match shape.len() {
        3 => (shape[0], shape[2]),
        _ => (shape[0], shape[1]),
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
    )
    .expect("shape")
}

/// Full model parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct CferParams {
    pub store: ParamStore,
}

impl CferParams {
    /// Xavier-uniform matrices, zero biases. The embedding table comes from
    /// `embedding` when given, otherwise from a seeded uniform draw.
    pub fn init(
        config: &CferConfig,
        vocab_size: usize,
        embedding: Option<&EmbeddingTable>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (i, (name, shape)) in param_shapes(config, vocab_size).into_iter().enumerate() {
            let value = if name == "embedding" {
                match embedding {
                    Some(t) => {
                        if t.matrix.shape() != shape.as_slice() {
                            return Err(ModelError::Config(format!(
                                "embedding table {:?} does not match {:?}",
                                t.matrix.shape(),
                                shape
                            )));
                        }
                        t.matrix.clone()
                    }
                    None => {
                        EmbeddingTable::random(
                            vocab_size,
                            config.d_emb,
                            mix_seed(&[seed, i as u64]),
                        )
                        .matrix
                    }
                }
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                xavier(
                    &shape,
                    &mut ChaCha8Rng::seed_from_u64(mix_seed(&[seed, i as u64])),
                )
            };
            store.insert(name, value)?;
        }
        Ok(Self { store })
    }

    /// Wraps an existing store after checking names and shapes.
    pub fn from_store(
        config: &CferConfig,
        vocab_size: usize,
        store: ParamStore,
    ) -> Result<Self, ModelError> {
        let expected = param_shapes(config, vocab_size);
        if expected.len() != store.len() {
            return Err(ModelError::Config(format!(
                "parameter store has {} tensors, model needs {}",
                store.len(),
                expected.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(store.iter()) {
            if en != n || es.as_slice() != t.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {n} {:?} does not match expected {en} {es:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { store })
    }

    pub fn vocab_size(&self) -> usize {
        self.store
            .get("embedding")
            .map(|t| t.shape()[0])
            .unwrap_or(0)
    }
}

pub struct BlockVars<'g> {
    pub sub: Vec<(Var<'g>, Var<'g>)>,
    pub out_w: Var<'g>,
    pub out_b: Var<'g>,
}

/// Parameters bound to a graph, as leaves in registration order.
pub struct BoundParams<'g> {
    pub leaves: Vec<Var<'g>>,
    pub embedding: Var<'g>,
    pub text_fwd: GruVars<'g>,
    pub text_bwd: GruVars<'g>,
    pub blocks: Vec<BlockVars<'g>>,
    pub path_fwd: GruVars<'g>,
    pub path_bwd: GruVars<'g>,
    pub attn_w: Var<'g>,
    pub attn_b: Var<'g>,
    pub bil_w: Var<'g>,
    pub bil_b: Var<'g>,
}

impl<'g> BoundParams<'g> {
    /// Binds every tensor as a trainable leaf, or as a constant when no
    /// gradients are needed.
    pub fn bind(g: &'g Graph, params: &CferParams, config: &CferConfig, trainable: bool) -> Self {
        let mut map = IndexMap::new();
        let mut leaves = Vec::with_capacity(params.store.len());
        for (name, t) in params.store.iter() {
            let v = if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            };
            leaves.push(v);
            map.insert(name.as_str(), v);
        }
        let get = |n: &str| map[n];
        let gru = |prefix: &str| GruVars {
            w_x: get(&format!("{prefix}.w_x")),
            u_zr: get(&format!("{prefix}.u_zr")),
            u_n: get(&format!("{prefix}.u_n")),
            b: get(&format!("{prefix}.b")),
        };
        let blocks = (0..config.n_blocks)
            .map(|k| BlockVars {
                sub: (1..=config.sublayers_per_block)
                    .map(|l| {
                        (
                            get(&format!("dcgcn.{k}.{l}.w")),
                            get(&format!("dcgcn.{k}.{l}.b")),
                        )
                    })
                    .collect(),
                out_w: get(&format!("dcgcn.{k}.out.w")),
                out_b: get(&format!("dcgcn.{k}.out.b")),
            })
            .collect();
        Self {
            embedding: get("embedding"),
            text_fwd: gru("text.fwd"),
            text_bwd: gru("text.bwd"),
            blocks,
            path_fwd: gru("path.fwd"),
            path_bwd: gru("path.bwd"),
            attn_w: get("attn.w"),
            attn_b: get("attn.b"),
            bil_w: get("bilinear.w"),
            bil_b: get("bilinear.b"),
            leaves,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CferConfig {
        CferConfig {
            d_emb: 4,
            d_h: 8,
            n_blocks: 2,
            sublayers_per_block: 2,
            n_r: 3,
            dropout_dcgcn: 0.0,
            dropout_other: 0.0,
            path_cap: None,
            ablation: Default::default(),
        }
    }

    #[test]
    fn shapes_and_names() {
        let c = CferConfig::full_size(96);
        let shapes: IndexMap<String, Vec<usize>> = param_shapes(&c, 10).into_iter().collect();
        assert_eq!(shapes["dcgcn.0.3.w"], vec![75, 450]);
        assert_eq!(shapes["dcgcn.1.4.b"], vec![75]);
        assert_eq!(shapes["dcgcn.1.out.w"], vec![300, 300]);
        assert_eq!(shapes["text.fwd.u_n"], vec![150, 150]);
        assert_eq!(shapes["path.bwd.w_x"], vec![300, 900]);
        assert_eq!(shapes["attn.w"], vec![1, 1200]);
        assert_eq!(shapes["bilinear.w"], vec![600, 96, 600]);
        assert_eq!(shapes.len(), 1 + 8 + 2 * (8 + 2) + 8 + 4);
    }

    #[test]
    fn init_is_seeded() {
        let a = CferParams::init(&tiny(), 7, None, 1).unwrap();
        let b = CferParams::init(&tiny(), 7, None, 1).unwrap();
        let c = CferParams::init(&tiny(), 7, None, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .store
            .get("bilinear.b")
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == 0.0));
        assert_eq!(a.store.get("embedding").unwrap().row(0), &[0.0; 4]);
        assert!(CferParams::from_store(&tiny(), 7, a.store.clone()).is_ok());
        assert!(CferParams::from_store(&tiny(), 8, a.store).is_err());
    }
}
