//! Transformer building blocks and the two model assemblies: text → pose
//! generation and pose → text back-translation.

mod checkpoint;
mod layers;
mod pose2text;
mod text2pose;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SignError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Decoder, Encoder, Linear};
pub use pose2text::Pose2TextModel;
pub use text2pose::{Text2PoseModel, EOS_CHANNEL, OUTPUT_WIDTH};

/// Transformer dimensions shared by both models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl ModelConfig {
    /// 2 encoder and 2 decoder layers, width 128.
    pub fn text2pose() -> Self {
        ModelConfig {
            embed_dim: 128,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ff_dim: 512,
            dropout: 0.1,
            max_seq_len: 256,
        }
    }

    /// 7 encoder and 2 decoder layers, width 128.
    pub fn pose2text() -> Self {
        ModelConfig {
            n_encoder_layers: 7,
            ..Self::text2pose()
        }
    }

    /// Same layer counts with a different width; `ff_dim` follows as 4×.
    pub fn with_width(mut self, embed_dim: usize, n_heads: usize) -> Self {
        self.embed_dim = embed_dim;
        self.n_heads = n_heads;
        self.ff_dim = 4 * embed_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(SignError::invalid("embed_dim", "must be positive"));
        }
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(SignError::invalid(
                "n_heads",
                format!("{} does not divide embed_dim {}", self.n_heads, self.embed_dim),
            ));
        }
        if self.ff_dim == 0 {
            return Err(SignError::invalid("ff_dim", "must be positive"));
        }
        if self.n_encoder_layers == 0 || self.n_decoder_layers == 0 {
            return Err(SignError::invalid("n_encoder_layers", "both stacks need at least one layer"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SignError::invalid("dropout", format!("{} not in [0, 1)", self.dropout)));
        }
        if self.max_seq_len == 0 {
            return Err(SignError::invalid("max_seq_len", "must be positive"));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::text2pose()
    }
}

/// Sinusoidal position table:
/// `PE(p, 2i) = sin(p / 10000^(2i/d))`, `PE(p, 2i+1) = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(seq_len: usize, embed_dim: usize) -> Result<Tensor> {
    if seq_len == 0 || embed_dim == 0 {
        return Err(SignError::invalid("seq_len", "positional encoding needs positive sizes"));
    }
    let mut data = vec![0.0; seq_len * embed_dim];
    for pos in 0..seq_len {
        for c in 0..embed_dim {
            let i2 = (c - c % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / embed_dim as f64);
            data[pos * embed_dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![seq_len, embed_dim], data)
}

/// Additive mask hiding future positions: `-inf` strictly above the diagonal.
pub fn causal_mask(n: usize) -> Tensor {
    let mut m = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.data_mut()[i * n + j] = f64::NEG_INFINITY;
        }
    }
    m
}

/// `softmax(Q Kᵀ / √d + mask) V`. Returns the output and the attention
/// weights.
pub fn scaled_dot_product_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Tensor>,
) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(SignError::shape("attention", &qs, &ks));
    }
    if vs.len() != 2 || vs[0] != ks[0] {
        return Err(SignError::shape("attention", &ks, &vs));
    }
    let scores = tape.matmul_nt(q, k)?;
    let mut scores = tape.scale(scores, 1.0 / (qs[1] as f64).sqrt());
    if let Some(m) = mask {
        scores = tape.add_const(scores, m)?;
    }
    let weights = tape.softmax(scores, 1)?;
    Ok((tape.matmul(weights, v)?, weights))
}

/// Encoder output together with which positions are real (not padding).
#[derive(Clone, Debug)]
pub struct Memory {
    pub states: Var,
    pub keys: Option<Vec<bool>>,
}

/// A tape with every parameter of a store bound as a leaf, plus the dropout
/// setting for this pass.
pub struct Graph<'r> {
    pub tape: Tape,
    params: Vec<Var>,
    dropout: f64,
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Graph<'r> {
    /// Differentiable pass without dropout.
    pub fn new(store: &ParamStore) -> Self {
        Self::bind(Tape::new(), store, 0.0, None)
    }

    /// Gradient-free pass (evaluation mode).
    pub fn inference(store: &ParamStore) -> Self {
        Self::bind(Tape::inference(), store, 0.0, None)
    }

    /// Differentiable pass with dropout drawn from `rng`.
    pub fn training(store: &ParamStore, dropout: f64, rng: &'r mut dyn RngCore) -> Self {
        Self::bind(Tape::new(), store, dropout, Some(rng))
    }

    fn bind(mut tape: Tape, store: &ParamStore, dropout: f64, rng: Option<&'r mut dyn RngCore>) -> Self {
        let params = store.tensors().iter().map(|t| tape.param(t)).collect();
        Graph {
            tape,
            params,
            dropout,
            rng,
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.index()]
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => self.tape.dropout(x, self.dropout, rng),
            _ => x,
        }
    }

    /// Back-propagates `loss` and returns one gradient per parameter, in
    /// store order.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<Vec<f64>>> {
        self.tape.backward(loss)?;
        Ok(self
            .params
            .iter()
            .map(|&v| {
                self.tape
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.tape.value(v).len()])
            })
            .collect())
    }
}
