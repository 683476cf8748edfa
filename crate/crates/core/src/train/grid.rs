use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{dev_dtw, init_text2pose, train_text2pose, TrainConfig};
use crate::data::{CorpusSample, SourceKind};
use crate::error::{Result, SignError};
use crate::metrics::{corpus_bleu, BleuReport, MAX_ORDER};
use crate::nn::{ModelConfig, Pose2TextModel, Text2PoseModel};

/// `(λa, λb)` cells evaluated by default.
pub const DEFAULT_GRID: [(f64, f64); 5] = [(1.0, 10.0), (5.0, 1.0), (5.0, 5.0), (5.0, 10.0), (10.0, 5.0)];

/// Outcome of one grid cell for one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub arm: SourceKind,
    pub lambda_a: f64,
    pub lambda_b: f64,
    /// Back-translation BLEU and dev DTW, or why the cell failed.
    pub result: std::result::Result<(BleuReport, f64), String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    pub fn row(&self, arm: SourceKind, lambda_a: f64, lambda_b: f64) -> Option<&GridRow> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.lambda_a == lambda_a && r.lambda_b == lambda_b)
    }

    fn arms(&self) -> Vec<SourceKind> {
        let mut arms = Vec::new();
        for r in &self.rows {
            if !arms.contains(&r.arm) {
                arms.push(r.arm);
            }
        }
        arms
    }

    fn cells(&self) -> Vec<(f64, f64)> {
        let mut cells = Vec::new();
        for r in &self.rows {
            if !cells.contains(&(r.lambda_a, r.lambda_b)) {
                cells.push((r.lambda_a, r.lambda_b));
            }
        }
        cells
    }
}

/// One row per `(λa, λb)` cell, BLEU-1..4 (×100) per arm, then any failures.
impl fmt::Display for GridReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arms = self.arms();
        write!(f, "{:>8} {:>8}", "lambda_a", "lambda_b")?;
        for arm in &arms {
            write!(f, " |")?;
            for n in 1..=MAX_ORDER {
                write!(f, " {:>10}", format!("{}-BLEU-{n}", arm.arm_name()))?;
            }
        }
        writeln!(f)?;
        for (a, b) in self.cells() {
            write!(f, "{a:>8} {b:>8}")?;
            for &arm in &arms {
                write!(f, " |")?;
                match self.row(arm, a, b).map(|r| &r.result) {
                    Some(Ok((bleu, _))) => {
                        for v in bleu.bleu {
                            write!(f, " {:>10.2}", 100.0 * v)?;
                        }
                    }
                    Some(Err(_)) => {
                        for _ in 0..MAX_ORDER {
                            write!(f, " {:>10}", "FAILED")?;
                        }
                    }
                    None => {
                        for _ in 0..MAX_ORDER {
                            write!(f, " {:>10}", "-")?;
                        }
                    }
                }
            }
            writeln!(f)?;
        }
        for r in &self.rows {
            if let Err(reason) = &r.result {
                writeln!(f, "failed {} ({}, {}): {reason}", r.arm.arm_name(), r.lambda_a, r.lambda_b)?;
            }
        }
        Ok(())
    }
}

/// Generates each sample's pose (capped at `ratio` × reference length),
/// back-translates it and scores the sentences against the references.
pub fn backtranslation_bleu(
    generator: &Text2PoseModel,
    translator: &Pose2TextModel,
    samples: &[CorpusSample],
    max_frames_ratio: f64,
) -> Result<BleuReport> {
    let mut candidates = Vec::with_capacity(samples.len());
    let mut references = Vec::with_capacity(samples.len());
    for s in samples {
        let (ids, _) = generator.token_ids(s.source(generator.source()));
        let cap = ((s.pose.len() as f64) * max_frames_ratio).ceil().max(1.0) as usize;
        let pose = generator.generate(&ids, cap)?;
        candidates.push(translator.translate(&pose, 2 * s.sentence.len() + 2)?);
        references.push(s.sentence.clone());
    }
    corpus_bleu(&candidates, &references)
}

fn run_cell(
    train: &[CorpusSample],
    dev: &[CorpusSample],
    translator: &Pose2TextModel,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    arm: SourceKind,
    log_dir: Option<&Path>,
) -> Result<(BleuReport, f64)> {
    let model = init_text2pose(model_config.clone(), arm, train, cfg.seed)?;
    let outcome = match log_dir {
        Some(dir) => {
            let path = dir.join(format!(
                "{}_{}_{}.jsonl",
                arm.arm_name().to_lowercase(),
                cfg.weights.lambda_a,
                cfg.weights.lambda_b
            ));
            let file = File::create(&path).map_err(|e| SignError::io(&path, e))?;
            let mut w = BufWriter::new(file);
            let out = train_text2pose(model, train, dev, cfg, &mut w)?;
            w.flush().map_err(|e| SignError::io(&path, e))?;
            out
        }
        None => train_text2pose(model, train, dev, cfg, &mut std::io::sink())?,
    };
    let bleu = backtranslation_bleu(&outcome.model, translator, dev, cfg.max_frames_ratio)?;
    let dtw = dev_dtw(&outcome.model, dev, cfg.max_frames_ratio)?;
    Ok((bleu, dtw))
}

/// Trains one generator per `(arm, cell)` with `base` except for the loss
/// weights and scores each through the fixed `translator`. A failing cell is
/// recorded and the sweep continues.
pub fn grid_search(
    train: &[CorpusSample],
    dev: &[CorpusSample],
    translator: &Pose2TextModel,
    model_config: &ModelConfig,
    base: &TrainConfig,
    cells: &[(f64, f64)],
    arms: &[SourceKind],
    log_dir: Option<&Path>,
) -> Result<GridReport> {
    if cells.is_empty() || arms.is_empty() {
        return Err(SignError::Empty("grid needs at least one cell and one arm".into()));
    }
    let mut report = GridReport::default();
    for &(lambda_a, lambda_b) in cells {
        for &arm in arms {
            let mut cfg = base.clone();
            cfg.weights.lambda_a = lambda_a;
            cfg.weights.lambda_b = lambda_b;
            log::info!("grid cell {} lambda_a={lambda_a} lambda_b={lambda_b}", arm.arm_name());
            let result = run_cell(train, dev, translator, model_config, &cfg, arm, log_dir).map_err(|e| {
                log::warn!("grid cell {} ({lambda_a}, {lambda_b}) failed: {e}", arm.arm_name());
                e.to_string()
            });
            report.rows.push(GridRow {
                arm,
                lambda_a,
                lambda_b,
                result,
            });
        }
    }
    Ok(report)
}
