//! Optimiser, learning-rate schedule, the two training loops and the loss
//! weight grid.

mod grid;
mod pose2text;
mod text2pose;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SignError};
use crate::losses::{LossWeights, NegativeMode, ProbLoss};
use crate::tensor::ParamStore;

pub use grid::{backtranslation_bleu, grid_search, GridReport, GridRow, DEFAULT_GRID};
pub use pose2text::{evaluate_pose2text, init_pose2text, train_pose2text};
pub use text2pose::{dev_dtw, init_text2pose, teacher_forced_mse, train_text2pose};

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        OptimizerState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut OptimizerState, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(SignError::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for (t, g) in params.tensors().iter().zip(grads) {
        if t.numel() != g.len() {
            return Err(SignError::shape("adam_step", t.shape(), &[g.len()]));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((t, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, &g), m), v) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// An epoch improves only if it beats the best by more than this.
    pub threshold: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            factor: 0.5,
            patience: 5,
            min_lr: 1e-6,
            threshold: 1e-6,
        }
    }
}

/// Reduce-on-plateau for a metric to be minimised.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        PlateauScheduler {
            config,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Feeds one metric value and returns the (possibly reduced) rate.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        match self.best {
            Some(b) if metric >= b - self.config.threshold => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.config.patience {
                    self.bad_epochs = 0;
                    return (lr * self.config.factor).max(self.config.min_lr);
                }
            }
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        lr
    }
}

/// Which quantity picks the retained checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    /// Mean path-normalised DTW of generated dev poses.
    Dtw,
    /// Weighted training objective on the dev set.
    DevLoss,
}

/// Where triplet embeddings are pooled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletSpace {
    /// Mean of the 150 joint coordinates over frames.
    #[default]
    Pose,
    /// Mean of the decoder's frame input projection.
    Latent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many evaluations without improvement.
    pub early_stop_patience: Option<usize>,
    pub scheduler: SchedulerConfig,
    pub learning_rate: f64,
    pub seed: u64,
    pub selection: SelectionMetric,
    pub margin: f64,
    pub negative_mode: NegativeMode,
    pub triplet_space: TripletSpace,
    /// Weight of the end-of-sequence cross-entropy.
    pub lambda_eos: f64,
    pub prob_loss: ProbLoss,
    /// Evaluate on the dev set every this many epochs (and after the last).
    pub eval_every: usize,
    /// Generated dev poses are capped at this multiple of the reference length.
    pub max_frames_ratio: f64,
    /// Stop once an epoch's mean training regression loss falls below this.
    pub target_train_mse: Option<f64>,
    /// Rescale each batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            batch_size: 8,
            max_epochs: 100,
            early_stop_patience: None,
            scheduler: SchedulerConfig::default(),
            learning_rate: 1e-3,
            seed: 0,
            selection: SelectionMetric::Dtw,
            margin: 0.2,
            negative_mode: NegativeMode::Uniform,
            triplet_space: TripletSpace::Pose,
            lambda_eos: 1.0,
            prob_loss: ProbLoss::OneMinusProb,
            eval_every: 1,
            max_frames_ratio: 1.5,
            target_train_mse: None,
            grad_clip: Some(0.1),
        }
    }
}

impl TrainConfig {
    pub fn text2pose() -> Self {
        Self::default()
    }

    pub fn pose2text() -> Self {
        TrainConfig {
            selection: SelectionMetric::DevLoss,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(SignError::invalid("batch_size", "must be at least 2"));
        }
        if self.max_epochs == 0 {
            return Err(SignError::invalid("max_epochs", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(SignError::invalid("eval_every", "must be positive"));
        }
        if self.early_stop_patience == Some(0) {
            return Err(SignError::invalid("early_stop_patience", "must be positive"));
        }
        let s = &self.scheduler;
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return Err(SignError::invalid("scheduler.factor", format!("{} not in (0, 1)", s.factor)));
        }
        if s.patience == 0 {
            return Err(SignError::invalid("scheduler.patience", "must be positive"));
        }
        if !(s.min_lr >= 0.0 && s.threshold >= 0.0) {
            return Err(SignError::invalid("scheduler.min_lr", "must be nonnegative"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SignError::invalid("learning_rate", "must be positive"));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(SignError::invalid("margin", "must be nonnegative"));
        }
        if !(self.lambda_eos.is_finite() && self.lambda_eos >= 0.0) {
            return Err(SignError::invalid("lambda_eos", "must be nonnegative"));
        }
        if self.grad_clip.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return Err(SignError::invalid("grad_clip", "must be positive"));
        }
        if !(self.max_frames_ratio.is_finite() && self.max_frames_ratio > 0.0) {
            return Err(SignError::invalid("max_frames_ratio", "must be positive"));
        }
        Ok(())
    }
}

/// One line of the training log. Batch lines carry `batch`; epoch lines carry
/// `dev_metric` (when evaluated) and `best`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub kind: String,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub batch: Option<usize>,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_eos: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_d: Option<f64>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dev_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best: Option<bool>,
}

impl LogRecord {
    fn batch(epoch: usize, batch: usize, lr: f64, total: f64) -> Self {
        LogRecord {
            kind: "batch".into(),
            epoch,
            batch: Some(batch),
            lr,
            l_a: None,
            l_b: None,
            l_eos: None,
            l_c: None,
            l_d: None,
            total,
            dev_metric: None,
            best: None,
        }
    }
}

pub(crate) fn write_record(log: &mut dyn Write, rec: &LogRecord) -> Result<()> {
    let line = serde_json::to_string(rec).expect("log record serialises");
    writeln!(log, "{line}").map_err(|e| SignError::io("<training log>", e))
}

/// Result of a training run: the retained (best) model plus history.
#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Epoch records in order.
    pub epochs: Vec<LogRecord>,
}

/// Mean of per-batch values accumulated over an epoch.
#[derive(Default)]
struct Running {
    sums: [f64; 5],
    n: usize,
}

impl Running {
    fn add(&mut self, values: [f64; 5]) {
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += v;
        }
        self.n += 1;
    }

    fn mean(&self, i: usize) -> f64 {
        self.sums[i] / self.n.max(1) as f64
    }
}

/// Checks gradients for non-finite entries, then applies the optional
/// global-norm clip.
fn prepare_gradients(grads: &mut [Vec<f64>], clip: Option<f64>, epoch: usize, batch: usize) -> Result<()> {
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SignError::Divergence {
            epoch,
            batch,
            reason: "non-finite gradient".into(),
        });
    }
    if let Some(c) = clip {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm > c {
            let k = c / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= k);
        }
    }
    Ok(())
}

fn check_finite(value: f64, epoch: usize, batch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(SignError::Divergence {
            epoch,
            batch,
            reason: format!("loss is {value}"),
        })
    }
}

/// Per-epoch shuffle seed derived from the run seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64)
}
