//! Evaluation metrics: DTW over pose sequences and corpus BLEU.

mod bleu;
mod dtw;

pub use bleu::{corpus_bleu, BleuReport, MAX_ORDER};
pub use dtw::{dtw, dtw_by, dtw_pose, euclidean, DtwResult};
