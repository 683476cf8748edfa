// Blank-augmented CTC forward/backward recursions in log space.
//
// The extended label sequence interleaves blanks: [b, g1, b, g2, ..., gN, b].
// `alpha_in[t][s]` is the log mass of prefixes reaching state s at frame t
// *before* emitting frame t; `gamma[t][s]` is the log mass of suffixes leaving
// state s after frame t. Their product times y_t(l'_s) is the mass of all
// paths through (t, s).

pub(crate) struct CtcForward {
    pub log_prob: f64,
}

fn extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &g in target {
        ext.push(g);
        ext.push(blank);
    }
    ext
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Whether state `s` may be entered directly from `s - 2`.
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

fn alpha_in(probs: &[f64], t_len: usize, classes: usize, ext: &[usize], blank: usize) -> (Vec<f64>, Vec<f64>) {
    let s_len = ext.len();
    let mut a_in = vec![f64::NEG_INFINITY; t_len * s_len];
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    for t in 0..t_len {
        for s in 0..s_len {
            let incoming = if t == 0 {
                if s <= 1 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                let prev = &alpha[(t - 1) * s_len..t * s_len];
                let mut acc = prev[s];
                if s >= 1 {
                    acc = log_add(acc, prev[s - 1]);
                }
                if can_skip(ext, s, blank) {
                    acc = log_add(acc, prev[s - 2]);
                }
                acc
            };
            a_in[t * s_len + s] = incoming;
            alpha[t * s_len + s] = incoming + probs[t * classes + ext[s]].ln();
        }
    }
    (a_in, alpha)
}

pub(crate) fn forward(probs: &[f64], t_len: usize, classes: usize, target: &[usize], blank: usize) -> CtcForward {
    let ext = extended(target, blank);
    let s_len = ext.len();
    let (_, alpha) = alpha_in(probs, t_len, classes, &ext, blank);
    let last = &alpha[(t_len - 1) * s_len..];
    let mut lp = last[s_len - 1];
    if s_len >= 2 {
        lp = log_add(lp, last[s_len - 2]);
    }
    CtcForward { log_prob: lp }
}

/// d ln p / d probs, flattened `[T×C]`. Requires a feasible target.
pub(crate) fn log_prob_grad(probs: &[f64], t_len: usize, classes: usize, target: &[usize], blank: usize) -> Vec<f64> {
    let ext = extended(target, blank);
    let s_len = ext.len();
    let (a_in, alpha) = alpha_in(probs, t_len, classes, &ext, blank);
    let last = &alpha[(t_len - 1) * s_len..];
    let mut lp = last[s_len - 1];
    if s_len >= 2 {
        lp = log_add(lp, last[s_len - 2]);
    }

    let mut gamma = vec![f64::NEG_INFINITY; t_len * s_len];
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    for t in (0..t_len).rev() {
        for s in (0..s_len).rev() {
            let outgoing = if t == t_len - 1 {
                if s + 2 >= s_len {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
                let mut acc = next[s];
                if s + 1 < s_len {
                    acc = log_add(acc, next[s + 1]);
                }
                if s + 2 < s_len && can_skip(&ext, s + 2, blank) {
                    acc = log_add(acc, next[s + 2]);
                }
                acc
            };
            gamma[t * s_len + s] = outgoing;
            beta[t * s_len + s] = outgoing + probs[t * classes + ext[s]].ln();
        }
    }

    let mut grad = vec![0.0; t_len * classes];
    for t in 0..t_len {
        for s in 0..s_len {
            let l = a_in[t * s_len + s] + gamma[t * s_len + s];
            if l > f64::NEG_INFINITY {
                grad[t * classes + ext[s]] += (l - lp).exp();
            }
        }
    }
    grad
}
