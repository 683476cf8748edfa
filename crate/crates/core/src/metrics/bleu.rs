use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SignError};

pub const MAX_ORDER: usize = 4;

/// Corpus BLEU-1..4 with the counts behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// BLEU-n for n = 1..4.
    pub bleu: [f64; MAX_ORDER],
    /// Modified (clipped) n-gram precisions.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Single-reference corpus BLEU without smoothing: clipped n-gram matches and
/// lengths are summed over the corpus before the precisions are formed.
pub fn corpus_bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<BleuReport> {
    if candidates.is_empty() {
        return Err(SignError::Empty("BLEU over an empty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(SignError::shape("corpus_bleu", &[candidates.len()], &[references.len()]));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut c_len, mut r_len) = (0, 0);
    for (cand, refr) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += refr.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(refr, n);
            for (g, c) in ngram_counts(cand, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    let mut bleu = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        if precisions[..=n].contains(&0.0) {
            break;
        }
        log_sum += precisions[n].ln();
        bleu[n] = if n == 0 {
            // exact for the unigram case
            brevity_penalty * precisions[0]
        } else {
            brevity_penalty * (log_sum / (n + 1) as f64).exp()
        };
    }
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        matches,
        totals,
        candidate_len: c_len,
        reference_len: r_len,
    })
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in 0..MAX_ORDER {
            writeln!(f, "bleu_{}\t{:.6}", n + 1, self.bleu[n])?;
        }
        for n in 0..MAX_ORDER {
            writeln!(
                f,
                "precision_{}\t{:.6}\t{}/{}",
                n + 1,
                self.precisions[n],
                self.matches[n],
                self.totals[n]
            )?;
        }
        writeln!(f, "brevity_penalty\t{:.6}", self.brevity_penalty)?;
        write!(f, "length_ratio\t{}/{}", self.candidate_len, self.reference_len)
    }
}
