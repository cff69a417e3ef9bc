use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ModelConfig;
use crate::autodiff::{LstmWeights, Tape, Tensor, Var};
use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};

pub const EMBEDDING: &str = "embedding";

/// Every trainable tensor of the model, in a fixed registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub config: ModelConfig,
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

/// Weight/bias pair of an affine layer.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: Var,
    pub bias: Var,
}

/// A [`ParameterSet`] registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub embedding: Var,
    pub convs: Vec<Affine>,
    pub lstm_fwd: LstmWeights,
    pub lstm_bwd: LstmWeights,
    pub emotion_proj: Affine,
    pub cause_proj: Affine,
    pub biaffine: Affine,
    pub aux_emotion_proj: Affine,
    pub aux_cause_proj: Affine,
    pub aux_emotion_out: Affine,
    pub aux_cause_out: Affine,
}

/// `(name, shape, fan_in)` for every tensor except the embedding table.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Option<usize>)> {
    let mut out = Vec::new();
    for &k in &cfg.kernel_sizes {
        out.push((format!("conv{k}.weight"), vec![k, cfg.d_e, cfg.d_c], Some(k * cfg.d_e)));
        out.push((format!("conv{k}.bias"), vec![cfg.d_c], None));
    }
    let (f, h, z) = (cfg.feature_dim(), cfg.d_h, cfg.d_z);
    for dir in ["lstm_fwd", "lstm_bwd"] {
        out.push((format!("{dir}.w_ih"), vec![4 * h, f], Some(f)));
        out.push((format!("{dir}.w_hh"), vec![4 * h, h], Some(h)));
        out.push((format!("{dir}.bias"), vec![4 * h], None));
    }
    for (name, rows, cols) in [
        ("emotion_proj", z, 2 * h),
        ("cause_proj", z, 2 * h),
        ("biaffine", z, z),
        ("aux_emotion_proj", z, 2 * h),
        ("aux_cause_proj", z, 2 * h),
        ("aux_emotion_out", 2, z),
        ("aux_cause_out", 2, z),
    ] {
        out.push((format!("{name}.weight"), vec![rows, cols], Some(cols)));
        out.push((format!("{name}.bias"), vec![rows], None));
    }
    out
}

impl ParameterSet {
    /// Weights ~ `U(±√(6/fan_in))`, biases zero except LSTM forget gates (1).
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        embeddings: EmbeddingTable,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.d_e {
            return Err(Error::dim("embedding table", embeddings.matrix.shape(), &[config.d_e]));
        }
        let mut names = vec![EMBEDDING.to_string()];
        let mut values = vec![Arc::new(embeddings.matrix)];
        for (name, shape, fan_in) in layout(&config) {
            let mut t = Tensor::zeros(&shape);
            if let Some(fan_in) = fan_in {
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
                t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
            } else if name.starts_with("lstm") {
                let h = config.d_h;
                t.data_mut()[h..2 * h].fill(1.0);
            }
            names.push(name);
            values.push(Arc::new(t));
        }
        Ok(ParameterSet { config, names, values })
    }

    /// Reassembles a set from named tensors, checking names and shapes.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if named.len() != expected.len() + 1 {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                expected.len() + 1,
                named.len()
            )));
        }
        let (first, emb) = (&named[0].0, &named[0].1);
        if first != EMBEDDING || emb.shape().len() != 2 || emb.cols() != config.d_e {
            return Err(Error::Format(format!("first tensor must be the [V×{}] embedding", config.d_e)));
        }
        for ((name, t), (want, shape, _)) in named[1..].iter().zip(&expected) {
            if name != want || t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor {name} {:?} does not match expected {want} {shape:?}",
                    t.shape()
                )));
            }
        }
        let (names, values) = named.into_iter().map(|(n, t)| (n, Arc::new(t))).unzip();
        Ok(ParameterSet { config, names, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| self.values[i].as_ref())
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn shared(&self, i: usize) -> Arc<Tensor> {
        Arc::clone(&self.values[i])
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.values[i])
    }

    /// Mutable views of every tensor, in registration order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.values.iter_mut().map(Arc::make_mut).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(Arc::as_ref))
    }

    pub fn vocab_size(&self) -> usize {
        self.values[0].rows()
    }

    /// Leading elements of tensor `i` excluded from updates and the
    /// regularizer (the PAD embedding row).
    pub fn frozen_prefix(&self, i: usize) -> usize {
        if i == 0 {
            self.config.d_e
        } else {
            0
        }
    }

    pub fn element_count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Squared L2 norm over trainable entries.
    pub fn squared_norm(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, t)| t.data()[self.frozen_prefix(i)..].iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Registers every tensor as a leaf, sharing storage.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let vars: Vec<Var> = self
            .values
            .iter()
            .map(|v| tape.leaf_shared(Arc::clone(v), requires_grad))
            .collect();
        Bound::resolve(self, vars)
    }

    /// Registers caller-supplied tensors (same order and shapes) as leaves.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Bound {
        Bound::resolve(self, vars)
    }
}

impl Bound {
    fn resolve(set: &ParameterSet, vars: Vec<Var>) -> Self {
        let v = |name: &str| vars[set.index(name).unwrap_or_else(|| panic!("missing parameter {name}"))];
        let affine = |name: &str| Affine {
            weight: v(&format!("{name}.weight")),
            bias: v(&format!("{name}.bias")),
        };
        let lstm = |dir: &str| LstmWeights {
            w_ih: v(&format!("{dir}.w_ih")),
            w_hh: v(&format!("{dir}.w_hh")),
            bias: v(&format!("{dir}.bias")),
        };
        Bound {
            embedding: v(EMBEDDING),
            convs: set.config.kernel_sizes.iter().map(|k| affine(&format!("conv{k}"))).collect(),
            lstm_fwd: lstm("lstm_fwd"),
            lstm_bwd: lstm("lstm_bwd"),
            emotion_proj: affine("emotion_proj"),
            cause_proj: affine("cause_proj"),
            biaffine: affine("biaffine"),
            aux_emotion_proj: affine("aux_emotion_proj"),
            aux_cause_proj: affine("aux_cause_proj"),
            aux_emotion_out: affine("aux_emotion_out"),
            aux_cause_out: affine("aux_cause_out"),
            vars,
        }
    }
}
