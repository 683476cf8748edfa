use crate::data::PoseSequence;
use crate::error::{Result, SignError};

/// Optimal monotone alignment between two sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    /// Index pairs from `(0, 0)` to `(n - 1, m - 1)`.
    pub path: Vec<(usize, usize)>,
}

impl DtwResult {
    /// Cost divided by alignment length.
    pub fn normalized_cost(&self) -> f64 {
        self.cost / self.path.len() as f64
    }
}

/// Classic DTW over index sets `0..n` × `0..m` with a caller-supplied local
/// distance. Ties on the way back prefer the diagonal step, then the step
/// that advances only the first sequence, then only the second.
pub fn dtw_by(n: usize, m: usize, dist: impl Fn(usize, usize) -> f64) -> Result<DtwResult> {
    if n == 0 || m == 0 {
        return Err(SignError::Empty("dtw needs two nonempty sequences".into()));
    }
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + dist(i, j);
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        cost: acc[n * m - 1],
        path,
    })
}

pub fn dtw<T>(a: &[T], b: &[T], dist: impl Fn(&T, &T) -> f64) -> Result<DtwResult> {
    dtw_by(a.len(), b.len(), |i, j| dist(&a[i], &b[j]))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// DTW between pose sequences under per-frame Euclidean distance.
pub fn dtw_pose(a: &PoseSequence, b: &PoseSequence) -> Result<DtwResult> {
    dtw_by(a.len(), b.len(), |i, j| euclidean(a.frame(i), b.frame(j)))
}
