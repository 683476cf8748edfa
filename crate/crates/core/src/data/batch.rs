use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corpus::CorpusSample;
use crate::error::{Result, SignError};

/// Sample indices forming one training batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Shuffles `corpus` with `seed` and partitions it into batches of
/// `batch_size`. A trailing batch of one sample is merged into the previous
/// batch so every batch has an in-batch negative.
pub fn make_batches(corpus: &[CorpusSample], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(SignError::invalid("batch_size", "must be at least 2"));
    }
    if corpus.len() < 2 {
        return Err(SignError::invalid("corpus", "need at least 2 samples to form a batch"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|c| Batch { indices: c.to_vec() })
        .collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").indices.extend(tail.indices);
    }
    Ok(batches)
}

/// Right-pads id sequences with `pad` to the longest length.
pub fn pad_sequences(seqs: &[Vec<usize>], pad: usize) -> Vec<Vec<usize>> {
    let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut p = s.clone();
            p.resize(width, pad);
            p
        })
        .collect()
}
