//! Training losses: pose regression, the triplet metric loss and its sample
//! selection, CTC recognition, sentence translation, and their weighted
//! totals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SignError};
use crate::tensor::{Tape, Tensor, Var};

/// Aggregation weights for the two training objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Pose regression (MSE).
    pub lambda_a: f64,
    /// Triplet metric loss.
    pub lambda_b: f64,
    /// CTC gloss recognition.
    pub lambda_c: f64,
    /// Sentence translation.
    pub lambda_d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_a: 5.0,
            lambda_b: 5.0,
            lambda_c: 100.0,
            lambda_d: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_a", self.lambda_a),
            ("lambda_b", self.lambda_b),
            ("lambda_c", self.lambda_c),
            ("lambda_d", self.lambda_d),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SignError::invalid(name, format!("{v} is not a nonnegative weight")));
            }
        }
        Ok(())
    }

    pub fn text2pose(&self, l_a: f64, l_b: f64) -> f64 {
        self.lambda_a * l_a + self.lambda_b * l_b
    }

    pub fn pose2text(&self, l_c: f64, l_d: f64) -> f64 {
        self.lambda_c * l_c + self.lambda_d * l_d
    }
}

/// How a sequence probability becomes a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbLoss {
    /// `1 − p`.
    #[default]
    OneMinusProb,
    /// `−ln p`; stays informative when `p` underflows on long sequences.
    NegLog,
}

/// Mean squared error over all entries.
pub fn mse_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let d = tape.sub(pred, truth)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Temporal mean-pool of a `[T×n]` sequence to an `[n]` embedding.
pub fn pool_embedding(tape: &mut Tape, seq: Var) -> Result<Var> {
    if tape.shape(seq).len() != 2 {
        return Err(SignError::shape("pool_embedding", tape.shape(seq), &[0, 0]));
    }
    tape.mean_rows(seq)
}

fn squared_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.sum(sq))
}

/// `max(‖B − T‖² − ‖B − S‖² + margin, 0)`.
pub fn triplet_distance(tape: &mut Tape, baseline: Var, truth: Var, negative: Var, margin: f64) -> Result<Var> {
    if margin < 0.0 || !margin.is_finite() {
        return Err(SignError::invalid("margin", format!("{margin} must be finite and ≥ 0")));
    }
    if tape.shape(baseline) != tape.shape(truth) {
        return Err(SignError::shape("triplet_distance", tape.shape(baseline), tape.shape(truth)));
    }
    if tape.shape(baseline) != tape.shape(negative) {
        return Err(SignError::shape("triplet_distance", tape.shape(baseline), tape.shape(negative)));
    }
    let pos = squared_distance(tape, baseline, truth)?;
    let neg = squared_distance(tape, baseline, negative)?;
    let gap = tape.sub(pos, neg)?;
    let shifted = tape.affine(gap, 1.0, margin);
    Ok(tape.relu(shifted))
}

/// Plain-value form of [`triplet_distance`].
pub fn triplet_distance_values(baseline: &[f64], truth: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    let mut tape = Tape::inference();
    let b = tape.constant(&Tensor::vector(baseline.to_vec())?);
    let t = tape.constant(&Tensor::vector(truth.to_vec())?);
    let s = tape.constant(&Tensor::vector(negative.to_vec())?);
    let d = triplet_distance(&mut tape, b, t, s, margin)?;
    Ok(tape.scalar(d))
}

/// A (baseline, truth, false) embedding triple on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TripletBatch {
    /// Pooled ground truth of sample `anchor` (detached).
    pub baseline: Var,
    /// Pooled prediction for sample `anchor`.
    pub truth: Var,
    /// Pooled ground truth of sample `negative_index` (detached).
    pub negative: Var,
    pub margin: f64,
    pub anchor: usize,
    pub negative_index: usize,
}

/// Rule for picking the false sample of each triplet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// `j ≠ i` uniformly at random.
    #[default]
    Uniform,
    /// The other ground truth closest to sample `i`'s.
    Hardest,
}

/// Chooses one negative index `j ≠ i` for every sample.
pub fn select_negatives<R: Rng + ?Sized>(pooled_truths: &[Vec<f64>], mode: NegativeMode, rng: &mut R) -> Result<Vec<usize>> {
    let n = pooled_truths.len();
    if n < 2 {
        return Err(SignError::invalid("batch", "triplet selection needs at least 2 samples"));
    }
    Ok((0..n)
        .map(|i| match mode {
            NegativeMode::Uniform => {
                let k = rng.random_range(0..n - 1);
                if k < i {
                    k
                } else {
                    k + 1
                }
            }
            NegativeMode::Hardest => {
                let d = |j: usize| -> f64 {
                    pooled_truths[i].iter().zip(&pooled_truths[j]).map(|(a, b)| (a - b).powi(2)).sum()
                };
                (0..n)
                    .filter(|&j| j != i)
                    .fold((usize::MAX, f64::INFINITY), |best, j| {
                        let dj = d(j);
                        if dj < best.1 {
                            (j, dj)
                        } else {
                            best
                        }
                    })
                    .0
            }
        })
        .collect())
}

/// Builds one triplet per sample from ground-truth and predicted sequences
/// (each `[T_i × n]`, lengths may differ between samples). Baselines and
/// negatives are detached so gradients flow only through predictions.
pub fn select_triplets<R: Rng + ?Sized>(
    tape: &mut Tape,
    truths: &[Var],
    preds: &[Var],
    margin: f64,
    mode: NegativeMode,
    rng: &mut R,
) -> Result<Vec<TripletBatch>> {
    if truths.len() != preds.len() {
        return Err(SignError::shape("select_triplets", &[truths.len()], &[preds.len()]));
    }
    let mut pooled = Vec::with_capacity(truths.len());
    for &t in truths {
        let p = pool_embedding(tape, t)?;
        pooled.push(tape.detach(p));
    }
    let values: Vec<Vec<f64>> = pooled.iter().map(|&p| tape.value(p).to_vec()).collect();
    let negatives = select_negatives(&values, mode, rng)?;
    let mut out = Vec::with_capacity(truths.len());
    for (i, (&pred, &j)) in preds.iter().zip(&negatives).enumerate() {
        let truth = pool_embedding(tape, pred)?;
        out.push(TripletBatch {
            baseline: pooled[i],
            truth,
            negative: pooled[j],
            margin,
            anchor: i,
            negative_index: j,
        });
    }
    Ok(out)
}

/// Sum of triplet distances.
pub fn metric_loss(tape: &mut Tape, triplets: &[TripletBatch]) -> Result<Var> {
    if triplets.is_empty() {
        return Err(SignError::Empty("metric loss over no triplets".into()));
    }
    let terms = triplets
        .iter()
        .map(|t| triplet_distance(tape, t.baseline, t.truth, t.negative, t.margin))
        .collect::<Result<Vec<_>>>()?;
    tape.add_all(&terms)
}

/// `ln p(target | frame_probs)` on the tape.
pub fn ctc_log_probability(tape: &mut Tape, frame_probs: Var, target: &[usize], blank: usize) -> Result<Var> {
    tape.ctc_log_prob(frame_probs, target, blank)
}

/// Probability that per-frame distributions `[T × (G+1)]` emit `target`
/// after removing repeats and blanks. Infeasible targets give 0.
pub fn ctc_probability(frame_probs: &Tensor, target: &[usize], blank: usize) -> Result<f64> {
    let mut tape = Tape::inference();
    let p = tape.constant(frame_probs);
    let lp = tape.ctc_log_prob(p, target, blank)?;
    Ok(tape.scalar(lp).exp())
}

/// CTC recognition loss, `1 − p` or `−ln p`.
pub fn recognition_loss(tape: &mut Tape, frame_probs: Var, target: &[usize], blank: usize, form: ProbLoss) -> Result<Var> {
    let lp = tape.ctc_log_prob(frame_probs, target, blank)?;
    Ok(prob_loss(tape, lp, form))
}

fn prob_loss(tape: &mut Tape, log_p: Var, form: ProbLoss) -> Var {
    match form {
        ProbLoss::OneMinusProb => {
            let p = tape.exp(log_p);
            tape.affine(p, -1.0, 1.0)
        }
        ProbLoss::NegLog => tape.scale(log_p, -1.0),
    }
}

/// Sentence loss from step-wise word distributions `Z[U × W]`:
/// `1 − ∏ Z[i, target_i]` or `−Σ ln Z[i, target_i]`.
pub fn translation_loss(tape: &mut Tape, z: Var, target: &[usize], form: ProbLoss) -> Result<Var> {
    let rows = tape.shape(z).first().copied().unwrap_or(0);
    if rows != target.len() {
        return Err(SignError::shape("translation_loss", tape.shape(z), &[target.len()]));
    }
    let picked = tape.pick(z, target)?;
    Ok(match form {
        ProbLoss::OneMinusProb => {
            let p = tape.prod(picked);
            tape.affine(p, -1.0, 1.0)
        }
        ProbLoss::NegLog => {
            let l = tape.log(picked);
            let s = tape.sum(l);
            tape.scale(s, -1.0)
        }
    })
}

/// `λ_a·L_a + λ_b·L_b`.
pub fn total_text2pose_loss(tape: &mut Tape, l_a: Var, l_b: Var, w: &LossWeights) -> Result<Var> {
    let a = tape.scale(l_a, w.lambda_a);
    let b = tape.scale(l_b, w.lambda_b);
    tape.add(a, b)
}

/// `λ_c·L_c + λ_d·L_d`.
pub fn total_pose2text_loss(tape: &mut Tape, l_c: Var, l_d: Var, w: &LossWeights) -> Result<Var> {
    let c = tape.scale(l_c, w.lambda_c);
    let d = tape.scale(l_d, w.lambda_d);
    tape.add(c, d)
}
