use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, check_finite, prepare_gradients, epoch_seed, write_record, LogRecord, OptimizerState, PlateauScheduler, Running,
    SelectionMetric, TrainConfig, TrainOutcome,
};
use crate::data::{gloss_vocabulary, make_batches, word_vocabulary, CorpusSample, Vocabulary};
use crate::error::{Result, SignError};
use crate::losses::{recognition_loss, translation_loss, ProbLoss};
use crate::nn::{Graph, ModelConfig, Pose2TextModel};
use crate::tensor::Var;

/// Fresh back-translator whose vocabularies cover `train`.
pub fn init_pose2text(config: ModelConfig, train: &[CorpusSample], seed: u64) -> Result<Pose2TextModel> {
    Pose2TextModel::new(config, word_vocabulary(train), gloss_vocabulary(train), seed)
}

/// `(L_c, L_d)` for one sample. Glosses outside the vocabulary are dropped
/// from the CTC target; a target longer than the pose gives no `L_c` term.
fn sample_terms(model: &Pose2TextModel, g: &mut Graph, sample: &CorpusSample, form: ProbLoss) -> Result<(Option<Var>, Var)> {
    let memory = model.encode(g, &sample.pose)?;
    let glosses: Vec<usize> = sample.gloss.iter().filter_map(|t| model.glosses().id(t)).collect();
    let l_c = if glosses.len() <= sample.pose.len() {
        let probs = model.gloss_head(g, memory)?;
        Some(recognition_loss(&mut g.tape, probs, &glosses, Vocabulary::BLANK, form)?)
    } else {
        None
    };
    let (words, _) = model.words().encode_lossy(&sample.sentence);
    let (inputs, targets) = Pose2TextModel::teacher_pair(&words);
    let z = model.word_distributions(g, memory, &inputs)?;
    let l_d = translation_loss(&mut g.tape, z, &targets, form)?;
    Ok((l_c, l_d))
}

fn mean_terms(g: &mut Graph, terms: &[Var]) -> Result<Option<Var>> {
    if terms.is_empty() {
        return Ok(None);
    }
    let s = g.tape.add_all(terms)?;
    Ok(Some(g.tape.scale(s, 1.0 / terms.len() as f64)))
}

/// `λc·Lc + λd·Ld` over a batch with `[Lc, Ld]`.
fn batch_objective(
    model: &Pose2TextModel,
    g: &mut Graph,
    samples: &[&CorpusSample],
    cfg: &TrainConfig,
) -> Result<(Var, [f64; 2])> {
    let (mut cs, mut ds) = (Vec::new(), Vec::new());
    for s in samples {
        let (c, d) = sample_terms(model, g, s, cfg.prob_loss)?;
        cs.extend(c);
        ds.push(d);
    }
    let l_d = mean_terms(g, &ds)?.expect("nonempty batch");
    let w = &cfg.weights;
    let mut total = g.tape.scale(l_d, w.lambda_d);
    let mut c_val = 0.0;
    if let Some(l_c) = mean_terms(g, &cs)? {
        c_val = g.tape.scalar(l_c);
        let c = g.tape.scale(l_c, w.lambda_c);
        total = g.tape.add(c, total)?;
    }
    let d_val = g.tape.scalar(l_d);
    Ok((total, [c_val, d_val]))
}

/// Evaluation-mode `(L_c, L_d)` averaged over samples.
pub fn evaluate_pose2text(model: &Pose2TextModel, samples: &[CorpusSample], form: ProbLoss) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(SignError::Empty("evaluation over no samples".into()));
    }
    let (mut c, mut nc, mut d) = (0.0, 0usize, 0.0);
    for s in samples {
        let mut g = Graph::inference(model.params());
        let (lc, ld) = sample_terms(model, &mut g, s, form)?;
        if let Some(lc) = lc {
            c += g.tape.scalar(lc);
            nc += 1;
        }
        d += g.tape.scalar(ld);
    }
    Ok((c / nc.max(1) as f64, d / samples.len() as f64))
}

/// Trains a back-translator and returns the checkpoint with the lowest dev
/// loss `λc·Lc + λd·Ld`.
pub fn train_pose2text(
    mut model: Pose2TextModel,
    train: &[CorpusSample],
    dev: &[CorpusSample],
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainOutcome<Pose2TextModel>> {
    cfg.validate()?;
    if cfg.selection != SelectionMetric::DevLoss {
        return Err(SignError::invalid("selection", "back-translation selects on dev_loss"));
    }
    if dev.is_empty() {
        return Err(SignError::Empty("dev set".into()));
    }
    let dropout = model.config().dropout;
    let mut opt = OptimizerState::new(model.params(), cfg.learning_rate);
    let mut sched = PlateauScheduler::new(cfg.scheduler.clone());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut best: Option<(Pose2TextModel, usize, f64)> = None;
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
                let (loss, vals) = batch_objective(&model, &mut g, &samples, cfg)?;
                let total = g.tape.scalar(loss);
                check_finite(total, epoch, bi)?;
                (g.backward(loss)?, total, vals)
            };
            prepare_gradients(&mut grads, cfg.grad_clip, epoch, bi)?;
            adam_step(&mut opt, model.params_mut(), &grads)?;
            running.add([0.0, 0.0, vals[1], vals[0], total]);
            let mut rec = LogRecord::batch(epoch, bi, lr, total);
            rec.l_c = Some(vals[0]);
            rec.l_d = Some(vals[1]);
            write_record(log, &rec)?;
        }

        let last = epoch == cfg.max_epochs;
        let mut rec = LogRecord::batch(epoch, 0, lr, running.mean(4));
        rec.kind = "epoch".into();
        rec.batch = None;
        rec.l_c = Some(running.mean(3));
        rec.l_d = Some(running.mean(2));
        let mut stop = false;
        if epoch % cfg.eval_every == 0 || last {
            let (c, d) = evaluate_pose2text(&model, dev, cfg.prob_loss)?;
            let metric = cfg.weights.pose2text(c, d);
            check_finite(metric, epoch, 0)?;
            let improved = best.as_ref().is_none_or(|b| metric < b.2);
            if improved {
                best = Some((model.clone(), epoch, metric));
                since_best = 0;
            } else {
                since_best += 1;
                stop = cfg.early_stop_patience.is_some_and(|p| since_best >= p);
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
