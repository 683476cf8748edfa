// Central-difference gradient oracle. Independent of the tape's backward
// rules: it only evaluates forward values.

use super::dense::Tensor;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Below this magnitude a gradient is compared absolutely: finite differences
/// of an O(1) loss cannot resolve smaller values from roundoff.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRADIENT_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADIENT_FLOOR)
}

/// Five-point central difference `(−f(+2h) + 8f(+h) − 8f(−h) + f(−2h)) / 12h`.
/// Truncation error is O(h⁴), so a larger `h` keeps roundoff small.
fn stencil(h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (p2, p1, m1, m2) = (f(2.0 * h)?, f(h)?, f(-h)?, f(-2.0 * h)?);
    Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
}

/// Compares the tape gradient of scalar `f` at `x` with finite differences
/// and returns the worst elementwise relative error.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_grad());
    let loss = f(&mut tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(probe);
        let out = f(&mut tape, v)?;
        Ok(tape.scalar(out))
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        let fd = stencil(eps, |d| {
            probe.data_mut()[i] = orig + d;
            eval(&probe)
        })?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(*a, fd));
    }
    Ok(worst)
}

/// Gradient check over selected entries of a parameter store.
///
/// `loss` returns the scalar loss and the analytic gradient of every
/// parameter (in store order). Only `entries` (parameter, flat index) are
/// probed by finite differences.
pub fn param_gradient_check<F>(params: &ParamStore, entries: &[(ParamId, usize)], eps: f64, loss: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (_, analytic) = loss(params)?;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for &(id, i) in entries {
        let orig = probe.get(id).data()[i];
        let fd = stencil(eps, |d| {
            probe.get_mut(id).data_mut()[i] = orig + d;
            Ok(loss(&probe)?.0)
        })?;
        probe.get_mut(id).data_mut()[i] = orig;
        worst = worst.max(relative_error(analytic[id.0][i], fd));
    }
    Ok(worst)
}
