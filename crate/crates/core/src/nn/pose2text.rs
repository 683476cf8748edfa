use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, ModelKind};
use super::layers::{add_positions, xavier, Decoder, Encoder, Linear};
use super::{Graph, ModelConfig};
use crate::data::{PoseSequence, VocabKind, Vocabulary, FRAME_WIDTH};
use crate::error::{Result, SignError};
use crate::tensor::{ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
struct Layout {
    frame_in: Linear,
    encoder: Encoder,
    gloss_head: Linear,
    word_embed: ParamId,
    decoder: Decoder,
    word_head: Linear,
}

/// Back-translation model: pose frames → per-frame gloss distributions (for
/// CTC) and a greedy word decoder.
#[derive(Clone, Debug)]
pub struct Pose2TextModel {
    config: ModelConfig,
    words: Vocabulary,
    glosses: Vocabulary,
    params: ParamStore,
    layout: Layout,
}

impl Pose2TextModel {
    /// `glosses` must be a gloss vocabulary (blank at id 0) and `words` a word
    /// vocabulary.
    pub fn new(config: ModelConfig, words: Vocabulary, glosses: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if words.kind() != VocabKind::Word {
            return Err(SignError::Vocab("word decoder needs a word vocabulary".into()));
        }
        if glosses.kind() != VocabKind::Gloss {
            return Err(SignError::Vocab("gloss head needs a gloss vocabulary with a blank".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let layout = Layout {
            frame_in: Linear::new(&mut store, "frame_in", FRAME_WIDTH, d, &mut rng),
            encoder: Encoder::new(&mut store, "enc", &config, &mut rng),
            gloss_head: Linear::new(&mut store, "gloss_head", d, glosses.len(), &mut rng),
            word_embed: store.add("word_embed", xavier(words.len(), d, &mut rng)),
            decoder: Decoder::new(&mut store, "dec", &config, &mut rng),
            word_head: Linear::new(&mut store, "word_head", d, words.len(), &mut rng),
        };
        Ok(Pose2TextModel {
            config,
            words,
            glosses,
            params: store,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn words(&self) -> &Vocabulary {
        &self.words
    }

    pub fn glosses(&self) -> &Vocabulary {
        &self.glosses
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Contextual frame embeddings `[T × embed_dim]`.
    pub fn encode(&self, g: &mut Graph, frames: &PoseSequence) -> Result<Var> {
        if frames.len() > self.config.max_seq_len {
            return Err(SignError::invalid(
                "frames",
                format!("length {} exceeds max_seq_len {}", frames.len(), self.config.max_seq_len),
            ));
        }
        let x = g.tape.constant(&frames.to_tensor());
        let x = self.layout.frame_in.forward(g, x)?;
        let x = add_positions(g, x)?;
        self.layout.encoder.forward(g, x, None)
    }

    /// Per-frame distributions over glosses plus blank, `[T × (G+1)]`.
    pub fn gloss_head(&self, g: &mut Graph, memory: Var) -> Result<Var> {
        let logits = self.layout.gloss_head.forward(g, memory)?;
        g.tape.softmax(logits, 1)
    }

    /// Inference-mode gloss distributions for a pose sequence.
    pub fn gloss_probabilities(&self, frames: &PoseSequence) -> Result<Tensor> {
        let mut g = Graph::inference(&self.params);
        let memory = self.encode(&mut g, frames)?;
        let p = self.gloss_head(&mut g, memory)?;
        Ok(g.tape.tensor(p))
    }

    /// Step-wise word distributions `Z[n × W]` given decoder inputs (BOS
    /// followed by the words so far).
    pub fn word_distributions(&self, g: &mut Graph, memory: Var, inputs: &[usize]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(SignError::Empty("decoder needs at least the BOS token".into()));
        }
        if inputs.len() > self.config.max_seq_len {
            return Err(SignError::invalid(
                "words",
                format!("length {} exceeds max_seq_len {}", inputs.len(), self.config.max_seq_len),
            ));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.words.len()) {
            return Err(SignError::Vocab(format!("word id {bad} outside vocabulary of {}", self.words.len())));
        }
        let table = g.param(self.layout.word_embed);
        let x = g.tape.gather_rows(table, inputs)?;
        let x = add_positions(g, x)?;
        let h = self.layout.decoder.forward(g, x, memory, None)?;
        let logits = self.layout.word_head.forward(g, h)?;
        g.tape.softmax(logits, 1)
    }

    /// Teacher-forcing pair for a sentence: inputs `BOS w₁…wₙ`, targets
    /// `w₁…wₙ EOS`.
    pub fn teacher_pair(words: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let mut inputs = vec![Vocabulary::BOS];
        inputs.extend_from_slice(words);
        let mut targets = words.to_vec();
        targets.push(Vocabulary::EOS);
        (inputs, targets)
    }

    /// Greedy decoding from BOS until EOS or `max_words` words. Returns the
    /// word ids (without BOS/EOS) and every step's distribution.
    pub fn decode_text_with_distributions(
        &self,
        g: &mut Graph,
        memory: Var,
        max_words: usize,
    ) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        if max_words == 0 {
            return Err(SignError::invalid("max_words", "must be at least 1"));
        }
        let cap = max_words.min(self.config.max_seq_len.saturating_sub(1).max(1));
        let w = self.words.len();
        let mut inputs = vec![Vocabulary::BOS];
        let mut dists = Vec::new();
        while inputs.len() <= cap {
            let z = self.word_distributions(g, memory, &inputs)?;
            let row = g.tape.value(z)[(inputs.len() - 1) * w..inputs.len() * w].to_vec();
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc })
                .0;
            dists.push(row);
            if best == Vocabulary::EOS {
                break;
            }
            inputs.push(best);
        }
        Ok((inputs[1..].to_vec(), dists))
    }

    /// Greedy decoding; word ids without BOS/EOS.
    pub fn decode_text_autoregressive(&self, g: &mut Graph, memory: Var, max_words: usize) -> Result<Vec<usize>> {
        Ok(self.decode_text_with_distributions(g, memory, max_words)?.0)
    }

    /// Inference-mode pose → sentence.
    pub fn translate(&self, frames: &PoseSequence, max_words: usize) -> Result<Vec<String>> {
        let mut g = Graph::inference(&self.params);
        let memory = self.encode(&mut g, frames)?;
        let ids = self.decode_text_autoregressive(&mut g, memory, max_words)?;
        Ok(self.words.decode(&ids))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::Pose2Text,
            config: self.config.clone(),
            source: None,
            vocabularies: vec![("words".into(), self.words.clone()), ("glosses".into(), self.glosses.clone())],
            tensors: self.params.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(ModelKind::Pose2Text)?;
        let words = ckpt.vocabulary("words")?.clone();
        let glosses = ckpt.vocabulary("glosses")?.clone();
        let mut model = Self::new(ckpt.config.clone(), words, glosses, 0)?;
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
