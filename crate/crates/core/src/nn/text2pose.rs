use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, ModelKind};
use super::layers::{add_positions, key_padding_mask, xavier, Decoder, Encoder, Linear};
use super::{Graph, Memory, ModelConfig};
use crate::data::{PoseSequence, SourceKind, Vocabulary, FRAME_WIDTH};
use crate::error::{Result, SignError};
use crate::tensor::{ParamId, ParamStore, Tensor, Var};

/// Joint coordinates plus one end-of-sequence logit.
pub const OUTPUT_WIDTH: usize = FRAME_WIDTH + 1;
pub const EOS_CHANNEL: usize = FRAME_WIDTH;

#[derive(Clone, Debug)]
struct Layout {
    embed: ParamId,
    frame_in: Linear,
    encoder: Encoder,
    decoder: Decoder,
    out: Linear,
}

impl Layout {
    fn build(config: &ModelConfig, vocab_len: usize, seed: u64) -> (ParamStore, Layout) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let layout = Layout {
            embed: store.add("embed", xavier(vocab_len, d, &mut rng)),
            frame_in: Linear::new(&mut store, "frame_in", FRAME_WIDTH, d, &mut rng),
            encoder: Encoder::new(&mut store, "enc", config, &mut rng),
            decoder: Decoder::new(&mut store, "dec", config, &mut rng),
            out: Linear::new(&mut store, "out", d, OUTPUT_WIDTH, &mut rng),
        };
        (store, layout)
    }
}

/// Transformer mapping a token sequence (words or glosses) to pose frames.
#[derive(Clone, Debug)]
pub struct Text2PoseModel {
    config: ModelConfig,
    source: SourceKind,
    vocab: Vocabulary,
    params: ParamStore,
    layout: Layout,
}

impl Text2PoseModel {
    pub fn new(config: ModelConfig, source: SourceKind, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, layout) = Layout::build(&config, vocab.len(), seed);
        Ok(Text2PoseModel {
            config,
            source,
            vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn source(&self) -> SourceKind {
        self.source
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Token ids with `<unk>` substitution; also returns the unknown tokens.
    pub fn token_ids<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<usize>, Vec<String>) {
        self.vocab.encode_lossy(tokens)
    }

    /// Contextual embeddings `[U × embed_dim]` for token ids. `<pad>` ids are
    /// hidden from every attention so trailing padding changes nothing.
    pub fn encode(&self, g: &mut Graph, ids: &[usize]) -> Result<Memory> {
        if ids.is_empty() {
            return Err(SignError::Empty("encode needs at least one token".into()));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(SignError::invalid(
                "tokens",
                format!("length {} exceeds max_seq_len {}", ids.len(), self.config.max_seq_len),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(SignError::Vocab(format!("token id {bad} outside vocabulary of {}", self.vocab.len())));
        }
        let keys: Vec<bool> = ids.iter().map(|&i| i != Vocabulary::PAD).collect();
        if !keys.contains(&true) {
            return Err(SignError::Empty("encode needs a non-padding token".into()));
        }
        let padded = keys.contains(&false);
        let mask = padded.then(|| key_padding_mask(ids.len(), &keys));
        let table = g.param(self.layout.embed);
        let x = g.tape.gather_rows(table, ids)?;
        let x = add_positions(g, x)?;
        let states = self.layout.encoder.forward(g, x, mask.as_ref())?;
        Ok(Memory {
            states,
            keys: padded.then_some(keys),
        })
    }

    /// Projects pose frames `[T × 150]` into the model's embedding space.
    pub fn frame_embedding(&self, g: &mut Graph, frames: Var) -> Result<Var> {
        self.layout.frame_in.forward(g, frames)
    }

    /// Decoder outputs `[T × 151]` for decoder inputs `[T × 150]`.
    pub fn decode(&self, g: &mut Graph, memory: &Memory, inputs: Var) -> Result<Var> {
        let t = g.tape.shape(inputs)[0];
        if t > self.config.max_seq_len {
            return Err(SignError::invalid(
                "frames",
                format!("length {t} exceeds max_seq_len {}", self.config.max_seq_len),
            ));
        }
        let x = self.frame_embedding(g, inputs)?;
        let x = add_positions(g, x)?;
        let h = self.layout.decoder.forward(g, x, memory.states, memory.keys.as_deref())?;
        self.layout.out.forward(g, h)
    }

    /// Teacher-forced decoder inputs: a zero start frame followed by all but
    /// the last ground-truth frame.
    pub fn teacher_inputs(target: &PoseSequence) -> Tensor {
        let t = target.len();
        let mut data = vec![0.0; t * FRAME_WIDTH];
        data[FRAME_WIDTH..].copy_from_slice(&target.as_flat()[..(t - 1) * FRAME_WIDTH]);
        Tensor::new(vec![t, FRAME_WIDTH], data).expect("nonempty pose")
    }

    /// Teacher-forced forward pass, returning `[T × 151]` outputs.
    pub fn forward_teacher(&self, g: &mut Graph, ids: &[usize], target: &PoseSequence) -> Result<Var> {
        let memory = self.encode(g, ids)?;
        let inputs = g.tape.constant(&Self::teacher_inputs(target));
        self.decode(g, &memory, inputs)
    }

    /// Generates frames one at a time from a zero start frame, feeding each
    /// prediction back, until the EOS probability exceeds 0.5 or
    /// `max_frames` (capped at `max_seq_len`) frames exist. The frame that
    /// raises EOS is kept.
    pub fn decode_pose_autoregressive(&self, g: &mut Graph, memory: &Memory, max_frames: usize) -> Result<PoseSequence> {
        if max_frames == 0 {
            return Err(SignError::invalid("max_frames", "must be at least 1"));
        }
        let cap = max_frames.min(self.config.max_seq_len);
        let mut inputs = vec![0.0; FRAME_WIDTH];
        let mut frames: Vec<f64> = Vec::with_capacity(cap * FRAME_WIDTH);
        for t in 0..cap {
            let x = g.tape.constant(&Tensor::new(vec![t + 1, FRAME_WIDTH], inputs.clone())?);
            let out = self.decode(g, memory, x)?;
            let row = &g.tape.value(out)[t * OUTPUT_WIDTH..(t + 1) * OUTPUT_WIDTH];
            let frame = &row[..FRAME_WIDTH];
            frames.extend_from_slice(frame);
            inputs.extend_from_slice(frame);
            if row[EOS_CHANNEL] > 0.0 {
                break;
            }
        }
        PoseSequence::from_flat(frames)
    }

    /// Inference-mode generation from token ids.
    pub fn generate(&self, ids: &[usize], max_frames: usize) -> Result<PoseSequence> {
        let mut g = Graph::inference(&self.params);
        let memory = self.encode(&mut g, ids)?;
        self.decode_pose_autoregressive(&mut g, &memory, max_frames)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Text2Pose,
            config: self.config.clone(),
            source: Some(self.source),
            vocabularies: vec![("source".into(), self.vocab.clone())],
            tensors: self.params.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Text2Pose)?;
        let vocab = ckpt.vocabulary("source")?.clone();
        let source = ckpt
            .source
            .ok_or_else(|| SignError::Checkpoint("text2pose checkpoint lacks a source kind".into()))?;
        let mut model = Self::new(ckpt.config.clone(), source, vocab, 0)?;
        model.params.load_values(&ckpt.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
