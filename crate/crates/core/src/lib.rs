//! Text-to-pose sign generation with a metric-embedded (triplet) loss, the
//! pose-to-text back-translation evaluator, and the exact evaluation
//! algorithms they rely on (CTC, DTW, BLEU).

pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Result, SignError};
