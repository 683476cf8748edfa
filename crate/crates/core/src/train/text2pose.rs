use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, check_finite, prepare_gradients, epoch_seed, write_record, LogRecord, OptimizerState, PlateauScheduler, Running,
    SelectionMetric, TrainConfig, TrainOutcome, TripletSpace,
};
use crate::data::{make_batches, source_vocabulary, CorpusSample, SourceKind, FRAME_WIDTH};
use crate::error::{Result, SignError};
use crate::losses::{metric_loss, mse_loss, select_triplets};
use crate::metrics::dtw_pose;
use crate::nn::{Graph, ModelConfig, Text2PoseModel, EOS_CHANNEL};
use crate::tensor::Var;

/// Fresh generator whose source vocabulary covers `train`.
pub fn init_text2pose(
    config: ModelConfig,
    source: SourceKind,
    train: &[CorpusSample],
    seed: u64,
) -> Result<Text2PoseModel> {
    Text2PoseModel::new(config, source, source_vocabulary(train, source), seed)
}

/// Per-sample regression and EOS terms on one graph.
struct SampleTerms {
    mse: Var,
    eos: Var,
    truth: Var,
    pred: Var,
}

fn sample_terms(model: &Text2PoseModel, g: &mut Graph, sample: &CorpusSample) -> Result<SampleTerms> {
    let (ids, _) = model.token_ids(sample.source(model.source()));
    let out = model.forward_teacher(g, &ids, &sample.pose)?;
    let pred = g.tape.slice_cols(out, 0, FRAME_WIDTH)?;
    let logits = g.tape.slice_cols(out, EOS_CHANNEL, 1)?;
    let truth = g.tape.constant(&sample.pose.to_tensor());
    let mse = mse_loss(&mut g.tape, pred, truth)?;
    let mut targets = vec![0.0; sample.pose.len()];
    *targets.last_mut().expect("nonempty pose") = 1.0;
    let eos = g.tape.bce_with_logits(logits, &targets)?;
    Ok(SampleTerms { mse, eos, truth, pred })
}

fn mean_of(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let s = g.tape.add_all(terms)?;
    Ok(g.tape.scale(s, 1.0 / terms.len() as f64))
}

/// Batch objective `λa·La + λb·Lb + λeos·Leos`; returns the total and the
/// component values `[La, Lb, Leos]`. Triplets are always drawn so runs that
/// differ only in `λb` consume the same random stream.
fn batch_objective(
    model: &Text2PoseModel,
    g: &mut Graph,
    samples: &[&CorpusSample],
    cfg: &TrainConfig,
    triplet_rng: &mut ChaCha8Rng,
) -> Result<(Var, [f64; 3])> {
    let terms = samples
        .iter()
        .map(|s| sample_terms(model, g, s))
        .collect::<Result<Vec<_>>>()?;
    let mses: Vec<Var> = terms.iter().map(|t| t.mse).collect();
    let eoss: Vec<Var> = terms.iter().map(|t| t.eos).collect();
    let l_a = mean_of(g, &mses)?;
    let l_eos = mean_of(g, &eoss)?;
    let (mut truths, mut preds) = (Vec::new(), Vec::new());
    for t in &terms {
        match cfg.triplet_space {
            TripletSpace::Pose => {
                truths.push(t.truth);
                preds.push(t.pred);
            }
            TripletSpace::Latent => {
                truths.push(model.frame_embedding(g, t.truth)?);
                preds.push(model.frame_embedding(g, t.pred)?);
            }
        }
    }
    let triplets = select_triplets(&mut g.tape, &truths, &preds, cfg.margin, cfg.negative_mode, triplet_rng)?;
    let l_b = metric_loss(&mut g.tape, &triplets)?;
    let w = &cfg.weights;
    let a = g.tape.scale(l_a, w.lambda_a);
    let b = g.tape.scale(l_b, w.lambda_b);
    let e = g.tape.scale(l_eos, cfg.lambda_eos);
    let total = g.tape.add_all(&[a, b, e])?;
    let vals = [g.tape.scalar(l_a), g.tape.scalar(l_b), g.tape.scalar(l_eos)];
    Ok((total, vals))
}

/// Mean per-sample teacher-forced MSE in evaluation mode.
pub fn teacher_forced_mse(model: &Text2PoseModel, samples: &[CorpusSample]) -> Result<f64> {
    Ok(teacher_forced_terms(model, samples)?.0)
}

fn teacher_forced_terms(model: &Text2PoseModel, samples: &[CorpusSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(SignError::Empty("evaluation over no samples".into()));
    }
    let (mut mse, mut eos) = (0.0, 0.0);
    for s in samples {
        let mut g = Graph::inference(model.params());
        let t = sample_terms(model, &mut g, s)?;
        mse += g.tape.scalar(t.mse);
        eos += g.tape.scalar(t.eos);
    }
    let n = samples.len() as f64;
    Ok((mse / n, eos / n))
}

/// Mean path-normalised DTW between generated and reference poses. Generation
/// stops at EOS or `ceil(ratio · reference length)` frames.
pub fn dev_dtw(model: &Text2PoseModel, samples: &[CorpusSample], max_frames_ratio: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(SignError::Empty("evaluation over no samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let (ids, _) = model.token_ids(s.source(model.source()));
        let cap = ((s.pose.len() as f64) * max_frames_ratio).ceil().max(1.0) as usize;
        let generated = model.generate(&ids, cap)?;
        total += dtw_pose(&generated, &s.pose)?.normalized_cost();
    }
    Ok(total / samples.len() as f64)
}

fn dev_metric(model: &Text2PoseModel, dev: &[CorpusSample], cfg: &TrainConfig) -> Result<f64> {
    match cfg.selection {
        SelectionMetric::Dtw => dev_dtw(model, dev, cfg.max_frames_ratio),
        SelectionMetric::DevLoss => {
            let (mse, eos) = teacher_forced_terms(model, dev)?;
            Ok(cfg.weights.lambda_a * mse + cfg.lambda_eos * eos)
        }
    }
}

/// Trains a pose generator and returns the checkpoint with the best dev
/// metric. One JSON line per batch and per epoch goes to `log`.
pub fn train_text2pose(
    mut model: Text2PoseModel,
    train: &[CorpusSample],
    dev: &[CorpusSample],
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainOutcome<Text2PoseModel>> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(SignError::Empty("dev set".into()));
    }
    let dropout = model.config().dropout;
    let mut opt = OptimizerState::new(model.params(), cfg.learning_rate);
    let mut sched = PlateauScheduler::new(cfg.scheduler.clone());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut triplet_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    triplet_rng.set_stream(2);

    let mut best: Option<(Text2PoseModel, usize, f64)> = None;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let lr = opt.lr;
        let mut running = Running::default();
        for (bi, batch) in make_batches(train, cfg.batch_size, epoch_seed(cfg.seed, epoch))?
            .iter()
            .enumerate()
        {
            let samples: Vec<&CorpusSample> = batch.indices.iter().map(|&i| &train[i]).collect();
            let (mut grads, total, vals) = {
                let mut g = Graph::training(model.params(), dropout, &mut dropout_rng);
                let (loss, vals) = batch_objective(&model, &mut g, &samples, cfg, &mut triplet_rng)?;
                let total = g.tape.scalar(loss);
                check_finite(total, epoch, bi)?;
                (g.backward(loss)?, total, vals)
            };
            prepare_gradients(&mut grads, cfg.grad_clip, epoch, bi)?;
            adam_step(&mut opt, model.params_mut(), &grads)?;
            running.add([vals[0], vals[1], vals[2], 0.0, total]);
            let mut rec = LogRecord::batch(epoch, bi, lr, total);
            rec.l_a = Some(vals[0]);
            rec.l_b = Some(vals[1]);
            rec.l_eos = Some(vals[2]);
            write_record(log, &rec)?;
        }

        let reached_target = cfg.target_train_mse.is_some_and(|t| running.mean(0) < t);
        let last = epoch == cfg.max_epochs || reached_target;
        let mut rec = LogRecord::batch(epoch, 0, lr, running.mean(4));
        rec.kind = "epoch".into();
        rec.batch = None;
        rec.l_a = Some(running.mean(0));
        rec.l_b = Some(running.mean(1));
        rec.l_eos = Some(running.mean(2));
        let mut stop = reached_target;
        if epoch % cfg.eval_every == 0 || last {
            let metric = dev_metric(&model, dev, cfg)?;
            check_finite(metric, epoch, 0)?;
            let improved = best.as_ref().is_none_or(|b| metric < b.2);
            if improved {
                best = Some((model.clone(), epoch, metric));
                since_best = 0;
            } else {
                since_best += 1;
                stop |= cfg.early_stop_patience.is_some_and(|p| since_best >= p);
            }
            opt.lr = sched.step(metric, opt.lr);
            rec.dev_metric = Some(metric);
            rec.best = Some(improved);
        }
        write_record(log, &rec)?;
        epochs.push(rec);
        if stop {
            break;
        }
    }
    let (model, best_epoch, best_metric) = best.expect("last epoch always evaluates");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_metric,
        epochs,
    })
}
