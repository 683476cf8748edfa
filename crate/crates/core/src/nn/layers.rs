use rand::Rng;

use super::{causal_mask, positional_encoding, scaled_dot_product_attention, Graph, ModelConfig};
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tensor, Var};

/// Xavier-uniform `[rows × cols]` matrix.
pub(crate) fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

/// `x W + b` with `W[in × out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), xavier(fan_in, fan_out, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let h = g.tape.matmul(x, w)?;
        g.tape.add_row(h, b)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Tensor::new(vec![dim], vec![1.0; dim]).expect("dim > 0")),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.tape.layer_norm(x, gamma, beta, 1e-5)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
            heads: cfg.n_heads,
        }
    }

    fn forward(&self, g: &mut Graph, query: Var, memory: Var, mask: Option<&Tensor>) -> Result<Var> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let width = g.tape.shape(q)[1] / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.tape.slice_cols(q, h * width, width)?;
            let kh = g.tape.slice_cols(k, h * width, width)?;
            let vh = g.tape.slice_cols(v, h * width, width)?;
            outs.push(scaled_dot_product_attention(&mut g.tape, qh, kh, vh, mask)?.0);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.tape.concat_cols(&outs)? };
        self.o.forward(g, cat)
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), cfg.embed_dim, cfg.ff_dim, rng),
            down: Linear::new(store, &format!("{name}.down"), cfg.ff_dim, cfg.embed_dim, rng),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.tape.relu(h);
        self.down.forward(g, h)
    }
}

/// Residual wrapper: `x + dropout(f(norm(x)))`.
fn residual(g: &mut Graph, x: Var, norm: &Norm, f: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<Var> {
    let h = norm.forward(g, x)?;
    let h = f(g, h)?;
    let h = g.dropout(h);
    g.tape.add(x, h)
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    n1: Norm,
    attn: MultiHeadAttention,
    n2: Norm,
    ff: FeedForward,
}

/// Stack of pre-norm self-attention layers with a final norm.
#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<EncoderLayer>,
    norm: Norm,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let layers = (0..cfg.n_encoder_layers)
            .map(|i| {
                let p = format!("{name}.{i}");
                EncoderLayer {
                    n1: Norm::new(store, &format!("{p}.norm1"), cfg.embed_dim),
                    attn: MultiHeadAttention::new(store, &format!("{p}.attn"), cfg, rng),
                    n2: Norm::new(store, &format!("{p}.norm2"), cfg.embed_dim),
                    ff: FeedForward::new(store, &format!("{p}.ff"), cfg, rng),
                }
            })
            .collect();
        Encoder {
            layers,
            norm: Norm::new(store, &format!("{name}.norm"), cfg.embed_dim),
        }
    }

    /// `key_mask` (additive, `[T × T]`) hides padding positions.
    pub fn forward(&self, g: &mut Graph, mut x: Var, key_mask: Option<&Tensor>) -> Result<Var> {
        for l in &self.layers {
            x = residual(g, x, &l.n1, |g, h| l.attn.forward(g, h, h, key_mask))?;
            x = residual(g, x, &l.n2, |g, h| l.ff.forward(g, h))?;
        }
        self.norm.forward(g, x)
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    n1: Norm,
    self_attn: MultiHeadAttention,
    n2: Norm,
    cross: MultiHeadAttention,
    n3: Norm,
    ff: FeedForward,
}

/// Causal self-attention plus cross-attention to an encoder memory.
#[derive(Clone, Debug)]
pub struct Decoder {
    layers: Vec<DecoderLayer>,
    norm: Norm,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let layers = (0..cfg.n_decoder_layers)
            .map(|i| {
                let p = format!("{name}.{i}");
                DecoderLayer {
                    n1: Norm::new(store, &format!("{p}.norm1"), cfg.embed_dim),
                    self_attn: MultiHeadAttention::new(store, &format!("{p}.self"), cfg, rng),
                    n2: Norm::new(store, &format!("{p}.norm2"), cfg.embed_dim),
                    cross: MultiHeadAttention::new(store, &format!("{p}.cross"), cfg, rng),
                    n3: Norm::new(store, &format!("{p}.norm3"), cfg.embed_dim),
                    ff: FeedForward::new(store, &format!("{p}.ff"), cfg, rng),
                }
            })
            .collect();
        Decoder {
            layers,
            norm: Norm::new(store, &format!("{name}.norm"), cfg.embed_dim),
        }
    }

    /// `memory_keys` lists which memory positions may be attended (all when
    /// `None`).
    pub fn forward(&self, g: &mut Graph, mut x: Var, memory: Var, memory_keys: Option<&[bool]>) -> Result<Var> {
        let n = g.tape.shape(x)[0];
        let mask = causal_mask(n);
        let cross_mask = memory_keys.map(|keys| key_padding_mask(n, keys));
        for l in &self.layers {
            x = residual(g, x, &l.n1, |g, h| l.self_attn.forward(g, h, h, Some(&mask)))?;
            x = residual(g, x, &l.n2, |g, h| l.cross.forward(g, h, memory, cross_mask.as_ref()))?;
            x = residual(g, x, &l.n3, |g, h| l.ff.forward(g, h))?;
        }
        self.norm.forward(g, x)
    }
}

/// Additive `[rows × keys.len()]` mask with `-inf` where `keys[j]` is false.
pub(crate) fn key_padding_mask(rows: usize, keys: &[bool]) -> Tensor {
    let row: Vec<f64> = keys.iter().map(|&k| if k { 0.0 } else { f64::NEG_INFINITY }).collect();
    Tensor::new(vec![rows, keys.len()], row.repeat(rows)).expect("positive dims")
}

/// Adds the sinusoidal table to `[T × d]` embeddings and applies dropout.
pub(crate) fn add_positions(g: &mut Graph, x: Var) -> Result<Var> {
    let (t, d) = (g.tape.shape(x)[0], g.tape.shape(x)[1]);
    let pe = positional_encoding(t, d)?;
    let x = g.tape.add_const(x, &pe)?;
    Ok(g.dropout(x))
}
