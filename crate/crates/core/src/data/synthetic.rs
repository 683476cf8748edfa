use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::corpus::CorpusSample;
use super::pose::{rest_pose, PoseSequence, FRAME_WIDTH};
use crate::error::{Result, SignError};

const WORDS: [&str; 32] = [
    "rain", "sun", "cloud", "wind", "snow", "storm", "fog", "frost", "north", "south", "east", "west", "today",
    "tomorrow", "morning", "evening", "night", "cold", "warm", "mild", "strong", "weak", "clear", "dry", "wet",
    "heavy", "light", "coast", "mountain", "valley", "weekend", "sunday",
];

/// Parameters of a seeded synthetic sign corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub motif_len_min: usize,
    pub motif_len_max: usize,
    pub sentence_len_min: usize,
    pub sentence_len_max: usize,
    pub noise_std: f64,
    /// Peak joint displacement of a motif around the rest pose.
    pub amplitude: f64,
    /// Word index pairs whose motifs differ only by a small offset.
    pub confusable_pairs: Vec<(usize, usize)>,
    pub confusable_offset: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 12,
            motif_len_min: 5,
            motif_len_max: 10,
            sentence_len_min: 2,
            sentence_len_max: 4,
            noise_std: 0.01,
            amplitude: 0.5,
            confusable_pairs: Vec::new(),
            confusable_offset: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Marks words (0,1), (2,3), … as confusable, `n` pairs in total.
    pub fn with_confusable_pairs(mut self, n: usize) -> Self {
        self.confusable_pairs = (0..n).map(|k| (2 * k, 2 * k + 1)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(SignError::invalid("vocab_size", "must be at least 2"));
        }
        if self.motif_len_min == 0 || self.motif_len_min > self.motif_len_max {
            return Err(SignError::invalid("motif_len_min", "need 1 ≤ motif_len_min ≤ motif_len_max"));
        }
        if self.sentence_len_min == 0 || self.sentence_len_min > self.sentence_len_max {
            return Err(SignError::invalid(
                "sentence_len_min",
                "need 1 ≤ sentence_len_min ≤ sentence_len_max",
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(SignError::invalid("noise_std", "must be finite and nonnegative"));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(SignError::invalid("amplitude", "must be finite and nonnegative"));
        }
        if !(self.confusable_offset.is_finite() && self.confusable_offset >= 0.0) {
            return Err(SignError::invalid("confusable_offset", "must be finite and nonnegative"));
        }
        let mut seen = vec![false; self.vocab_size];
        for &(a, b) in &self.confusable_pairs {
            if a >= self.vocab_size || b >= self.vocab_size || a == b {
                return Err(SignError::invalid("confusable_pairs", format!("bad pair ({a}, {b})")));
            }
            if seen[b] {
                return Err(SignError::invalid("confusable_pairs", format!("word {b} perturbed twice")));
            }
            seen[b] = true;
        }
        Ok(())
    }

    pub fn word(&self, i: usize) -> String {
        WORDS.get(i).map_or_else(|| format!("word{i:02}"), |w| (*w).to_owned())
    }

    /// The word → gloss table: upper-cased word. Injective.
    pub fn gloss(&self, i: usize) -> String {
        self.word(i).to_uppercase()
    }

    /// Per-word motifs, each `len × 150` row-major.
    pub fn motifs(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let rest = rest_pose();
        let mut motifs: Vec<Vec<f64>> = (0..self.vocab_size)
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(w as u64 + 1)));
                let len = rng.random_range(self.motif_len_min..=self.motif_len_max);
                let channels: Vec<(f64, f64, f64)> = (0..FRAME_WIDTH)
                    .map(|_| {
                        let amp = self.amplitude * rng.random_range(0.5..=1.0);
                        let cycles = if rng.random_bool(0.5) { 0.5 } else { 1.0 };
                        let phase = rng.random_range(0.0..std::f64::consts::TAU);
                        (amp, cycles, phase)
                    })
                    .collect();
                let mut m = Vec::with_capacity(len * FRAME_WIDTH);
                for t in 0..len {
                    let u = t as f64 / len as f64;
                    for (c, &(amp, cycles, phase)) in channels.iter().enumerate() {
                        m.push(rest[c] + amp * (std::f64::consts::TAU * cycles * u + phase).sin());
                    }
                }
                m
            })
            .collect();
        for (k, &(a, b)) in self.confusable_pairs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0xc0ff_ee00 + k as u64));
            let offsets: Vec<f64> = (0..FRAME_WIDTH)
                .map(|_| rng.random_range(-self.confusable_offset..=self.confusable_offset))
                .collect();
            motifs[b] = motifs[a]
                .chunks(FRAME_WIDTH)
                .flat_map(|f| f.iter().zip(&offsets).map(|(v, o)| v + o).collect::<Vec<_>>())
                .collect();
        }
        Ok(motifs)
    }
}

/// Generates `n_samples` seeded sentences with their glosses and poses.
///
/// A sample's pose is the concatenation of its words' motifs plus Gaussian
/// noise; identical `(spec, n_samples)` always give the same corpus.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, n_samples: usize) -> Result<Vec<CorpusSample>> {
    if n_samples == 0 {
        return Err(SignError::invalid("n_samples", "must be at least 1"));
    }
    let motifs = spec.motifs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| SignError::invalid("noise_std", e.to_string()))?;
    (0..n_samples)
        .map(|i| {
            let len = rng.random_range(spec.sentence_len_min..=spec.sentence_len_max);
            let words: Vec<usize> = (0..len).map(|_| rng.random_range(0..spec.vocab_size)).collect();
            let mut data = Vec::new();
            for &w in &words {
                data.extend_from_slice(&motifs[w]);
            }
            if spec.noise_std > 0.0 {
                for v in &mut data {
                    *v += noise.sample(&mut rng);
                }
            }
            Ok(CorpusSample {
                id: format!("s{i:04}"),
                sentence: words.iter().map(|&w| spec.word(w)).collect(),
                gloss: words.iter().map(|&w| spec.gloss(w)).collect(),
                pose: PoseSequence::from_flat(data)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_repeats_are_identical() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            vocab_size: 2,
            sentence_len_min: 1,
            sentence_len_max: 1,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, 12).unwrap();
        for a in &corpus {
            for b in &corpus {
                if a.sentence == b.sentence {
                    assert_eq!(a.pose, b.pose);
                }
            }
        }
    }

    #[test]
    fn pose_length_is_sum_of_motifs() {
        let spec = SyntheticSpec {
            motif_len_min: 5,
            motif_len_max: 5,
            sentence_len_min: 3,
            sentence_len_max: 3,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, 4).unwrap();
        assert!(corpus.iter().all(|s| s.pose.len() == 15));
    }

    #[test]
    fn confusable_motifs_are_close() {
        let spec = SyntheticSpec::default().with_confusable_pairs(4);
        let motifs = spec.motifs().unwrap();
        let bound = 0.05 * (FRAME_WIDTH as f64).sqrt();
        for &(a, b) in &spec.confusable_pairs {
            assert_eq!(motifs[a].len(), motifs[b].len());
            let frames = motifs[a].len() / FRAME_WIDTH;
            let mean: f64 = motifs[a]
                .chunks(FRAME_WIDTH)
                .zip(motifs[b].chunks(FRAME_WIDTH))
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / frames as f64;
            assert!(mean <= bound, "{mean} > {bound}");
            assert!(mean > 0.0);
        }
    }

    #[test]
    fn deterministic_and_feasible() {
        let spec = SyntheticSpec {
            seed: 9,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic_corpus(&spec, 10).unwrap();
        let b = generate_synthetic_corpus(&spec, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.gloss.len() <= s.pose.len()));
        assert!(a.iter().all(|s| s.gloss.len() == s.sentence.len()));
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let bad = SyntheticSpec {
            vocab_size: 1,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic_corpus(&bad, 3).unwrap_err().to_string().contains("vocab_size"));
        let bad = SyntheticSpec {
            noise_std: -1.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic_corpus(&bad, 3).unwrap_err().to_string().contains("noise_std"));
        assert!(generate_synthetic_corpus(&SyntheticSpec::default(), 0).is_err());
        let bad = SyntheticSpec::default().with_confusable_pairs(7);
        assert!(bad.validate().is_err());
    }
}
