//! A small BERT-style encoder: learned token and position embeddings,
//! post-layer-norm transformer blocks with GELU feed-forward layers, an MLM
//! head and one classifier head per task on the `[CLS]` position.

mod checkpoint;
mod forward;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskId;
use crate::tensor::{Real, Tensor};

pub use checkpoint::{
    check_architecture, from_bytes, load_checkpoint, save_checkpoint, to_bytes, CheckpointError, MAGIC, VERSION,
};
pub use forward::{classify, classify_logits, forward, mlm_logits, EncoderOutput};
pub(crate) use forward::{
    backward_sequence, example_rng, forward_sequence, head_logits, mlm_position_backward, mlm_position_logits,
};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sequences in a batch must share one length")]
    RaggedBatch,
    #[error("model has no classifier head for task {0}")]
    MissingHead(TaskId),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Tasks that get a classifier head; class counts follow from the task.
    pub tasks: Vec<TaskId>,
    pub dropout: f64,
    /// Use the transposed token embedding as the MLM projection.
    pub tie_mlm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 128,
            vocab_size: crate::tokenizer::DEFAULT_VOCAB_SIZE,
            max_len: crate::tokenizer::DEFAULT_MAX_LEN,
            tasks: TaskId::ALL.to_vec(),
            dropout: 0.1,
            tie_mlm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let sizes = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(EncoderError::InvalidConfig(format!("{name} must be at least 1")));
        }
        if self.hidden % self.heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let mut tasks = self.tasks.clone();
        tasks.sort();
        tasks.dedup();
        if tasks.len() != self.tasks.len() {
            return Err(EncoderError::InvalidConfig("duplicate task head".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Ordered `(name, shape)` list of every parameter tensor.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (self.hidden, self.ffn, self.vocab_size);
        let mut out = vec![
            ("token_embedding".to_string(), vec![v, d]),
            ("position_embedding".to_string(), vec![self.max_len, d]),
        ];
        for l in 0..self.layers {
            for (name, shape) in LayerParameters::<f32>::shapes(d, f) {
                out.push((format!("layers.{l}.{name}"), shape));
            }
        }
        if !self.tie_mlm {
            out.push(("mlm.weight".into(), vec![d, v]));
        }
        out.push(("mlm.bias".into(), vec![v]));
        let mut tasks = self.tasks.clone();
        tasks.sort();
        for t in tasks {
            out.push((format!("heads.{t}.weight"), vec![d, t.num_classes()]));
            out.push((format!("heads.{t}.bias"), vec![t.num_classes()]));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.manifest().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParameters<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
}

impl<T: Real> LayerParameters<T> {
    const NAMES: [&'static str; 16] = [
        "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
        "ln1.gain", "ln1.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln2.gain", "ln2.bias",
    ];

    fn shapes(d: usize, f: usize) -> Vec<(&'static str, Vec<usize>)> {
        let shapes = [
            vec![d, d], vec![d], vec![d, d], vec![d], vec![d, d], vec![d], vec![d, d], vec![d],
            vec![d], vec![d], vec![d, f], vec![f], vec![f, d], vec![d], vec![d], vec![d],
        ];
        Self::NAMES.into_iter().zip(shapes).collect()
    }

    fn tensors(&self) -> [&Tensor<T>; 16] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln1_gain, &self.ln1_bias, &self.w1, &self.b1, &self.w2, &self.b2,
            &self.ln2_gain, &self.ln2_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.wq, &mut self.bq, &mut self.wk, &mut self.bk, &mut self.wv, &mut self.bv,
            &mut self.wo, &mut self.bo, &mut self.ln1_gain, &mut self.ln1_bias, &mut self.w1,
            &mut self.b1, &mut self.w2, &mut self.b2, &mut self.ln2_gain, &mut self.ln2_bias,
        ]
    }

    fn from_tensors(mut t: impl Iterator<Item = Tensor<T>>) -> Self {
        let mut next = || t.next().expect("layer tensor");
        LayerParameters {
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            ln1_gain: next(),
            ln1_bias: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            ln2_gain: next(),
            ln2_bias: next(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    /// hidden × classes
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Every learnable tensor of the encoder and its heads. Gradients use the same
/// type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    config: EncoderConfig,
    /// vocab × hidden
    pub token_embedding: Tensor<T>,
    /// max_len × hidden
    pub position_embedding: Tensor<T>,
    pub layers: Vec<LayerParameters<T>>,
    /// hidden × vocab; `None` when tied to the token embedding.
    pub mlm_weight: Option<Tensor<T>>,
    pub mlm_bias: Tensor<T>,
    pub heads: BTreeMap<TaskId, ClassifierHead<T>>,
}

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TensorKind {
    Weight,
    Bias,
    Gain,
}

fn tensor_kind(name: &str) -> TensorKind {
    let last = name.rsplit('.').next().unwrap_or(name);
    match last {
        "gain" => TensorKind::Gain,
        "bias" | "bq" | "bk" | "bv" | "bo" | "b1" | "b2" => TensorKind::Bias,
        _ => TensorKind::Weight,
    }
}

impl<T: Real> ModelParameters<T> {
    /// Assembles parameters from tensors in manifest order.
    pub(crate) fn from_manifest_tensors(config: EncoderConfig, tensors: Vec<Tensor<T>>) -> Self {
        let mut it = tensors.into_iter();
        let token_embedding = it.next().expect("token embedding");
        let position_embedding = it.next().expect("position embedding");
        let layers = (0..config.layers)
            .map(|_| LayerParameters::from_tensors(&mut it))
            .collect();
        let mlm_weight = (!config.tie_mlm).then(|| it.next().expect("mlm weight"));
        let mlm_bias = it.next().expect("mlm bias");
        let mut tasks = config.tasks.clone();
        tasks.sort();
        let heads = tasks
            .into_iter()
            .map(|t| {
                let weight = it.next().expect("head weight");
                let bias = it.next().expect("head bias");
                (t, ClassifierHead { weight, bias })
            })
            .collect();
        ModelParameters {
            config,
            token_embedding,
            position_embedding,
            layers,
            mlm_weight,
            mlm_bias,
            heads,
        }
    }

    /// All-zero tensors shaped by `config`; used for gradients.
    pub fn zeros(config: &EncoderConfig) -> Self {
        let tensors = config
            .manifest()
            .iter()
            .map(|(_, shape)| Tensor::zeros(shape))
            .collect();
        Self::from_manifest_tensors(config.clone(), tensors)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        if let Some(w) = &self.mlm_weight {
            out.push(w);
        }
        out.push(&self.mlm_bias);
        for h in self.heads.values() {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        if let Some(w) = &mut self.mlm_weight {
            out.push(w);
        }
        out.push(&mut self.mlm_bias);
        for h in self.heads.values_mut() {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// `(name, tensor)` pairs in manifest order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.config
            .manifest()
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.tensors())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// The hidden × vocab MLM projection, materialized from the token
    /// embedding when tied.
    pub fn mlm_projection(&self) -> Tensor<T> {
        match &self.mlm_weight {
            Some(w) => w.clone(),
            None => {
                let (v, d) = (self.config.vocab_size, self.config.hidden);
                let e = self.token_embedding.data();
                let mut out = Vec::with_capacity(v * d);
                for j in 0..d {
                    for t in 0..v {
                        out.push(e[t * d + j]);
                    }
                }
                Tensor::from_vec(&[d, v], out)
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        let tensors = self.tensors().into_iter().map(Tensor::cast).collect();
        ModelParameters::from_manifest_tensors(self.config.clone(), tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_tensors()
            .into_iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub(crate) fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub(crate) fn head(&self, task: TaskId) -> Result<&ClassifierHead<T>, EncoderError> {
        self.heads.get(&task).ok_or(EncoderError::MissingHead(task))
    }
}

/// Truncated normal weights (σ = 0.02, cut at ±2σ), zero biases, unit
/// layer-norm gains. Deterministic per seed.
pub fn init_params<T: Real>(config: &EncoderConfig, seed: u64) -> Result<ModelParameters<T>, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let tensors = config
        .manifest()
        .into_iter()
        .map(|(name, shape)| match tensor_kind(&name) {
            TensorKind::Bias => Tensor::zeros(&shape),
            TensorKind::Gain => Tensor::filled(&shape, T::one()),
            TensorKind::Weight => {
                let n = shape.iter().product();
                let data = (0..n)
                    .map(|_| loop {
                        let x: f64 = normal.sample(&mut rng);
                        if x.abs() <= 2.0 * INIT_STD {
                            break T::of(x);
                        }
                    })
                    .collect();
                Tensor::from_vec(&shape, data)
            }
        })
        .collect();
    Ok(ModelParameters::from_manifest_tensors(config.clone(), tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn micro_config() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            hidden: 16,
            heads: 2,
            ffn: 32,
            vocab_size: 300,
            max_len: 32,
            tasks: vec![TaskId::A],
            dropout: 0.0,
            tie_mlm: false,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let c = micro_config();
        let a: ModelParameters<f32> = init_params(&c, 7).unwrap();
        let b: ModelParameters<f32> = init_params(&c, 7).unwrap();
        assert_eq!(a, b);
        let other: ModelParameters<f32> = init_params(&c, 8).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn parameter_count_closed_form() {
        // V=300, d=16, f=32, max_len=32, L=2, untied MLM head, task A (2 classes).
        let embeddings = 300 * 16 + 32 * 16;
        let attention = 4 * (16 * 16 + 16);
        let ffn = 16 * 32 + 32 + 32 * 16 + 16;
        let layer_norms = 2 * (16 + 16);
        let per_layer = attention + ffn + layer_norms;
        let mlm = 16 * 300 + 300;
        let head = 16 * 2 + 2;
        let expected = embeddings + 2 * per_layer + mlm + head;
        assert_eq!(expected, 14894);
        let p: ModelParameters<f32> = init_params(&micro_config(), 0).unwrap();
        assert_eq!(p.parameter_count(), expected);
        assert_eq!(micro_config().parameter_count(), expected);

        let tied = EncoderConfig {
            tie_mlm: true,
            ..micro_config()
        };
        assert_eq!(tied.parameter_count(), expected - 16 * 300);
    }

    #[test]
    fn init_distribution() {
        let p: ModelParameters<f64> = init_params(&micro_config(), 1).unwrap();
        let w = p.token_embedding.data();
        assert!(w.iter().all(|x| x.abs() <= 2.0 * INIT_STD));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 1e-3);
        assert!(p.layers[0].bq.data().iter().all(|&x| x == 0.0));
        assert!(p.layers[1].ln2_gain.data().iter().all(|&x| x == 1.0));
        assert!(p.heads[&TaskId::A].bias.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn f32_init_is_cast_of_f64_init() {
        let a: ModelParameters<f64> = init_params(&micro_config(), 3).unwrap();
        let b: ModelParameters<f32> = init_params(&micro_config(), 3).unwrap();
        assert_eq!(a.cast::<f32>(), b);
    }

    #[test]
    fn invalid_configs() {
        let bad = EncoderConfig {
            heads: 3,
            ..micro_config()
        };
        assert!(matches!(init_params::<f32>(&bad, 0), Err(EncoderError::InvalidConfig(_))));
        let bad = EncoderConfig {
            dropout: 1.0,
            ..micro_config()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            layers: 0,
            ..micro_config()
        };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig {
            tasks: vec![TaskId::A, TaskId::A],
            ..micro_config()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tied_projection_is_embedding_transpose() {
        let c = EncoderConfig {
            tie_mlm: true,
            ..micro_config()
        };
        let p: ModelParameters<f32> = init_params(&c, 0).unwrap();
        let proj = p.mlm_projection();
        assert_eq!(proj.shape(), &[16, 300]);
        for t in 0..300 {
            for j in 0..16 {
                assert_eq!(
                    proj.data()[j * 300 + t].to_bits(),
                    p.token_embedding.data()[t * 16 + j].to_bits()
                );
            }
        }
    }

    #[test]
    fn manifest_names_are_unique() {
        let c = EncoderConfig::default();
        let names: Vec<_> = c.manifest().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(tensor_kind("layers.0.attn.bq"), TensorKind::Bias);
        assert_eq!(tensor_kind("layers.0.ln1.gain"), TensorKind::Gain);
        assert_eq!(tensor_kind("heads.A.weight"), TensorKind::Weight);
    }
}
