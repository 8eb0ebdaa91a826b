use alloc::vec::Vec;

use super::tape::{Tape, Var};
use crate::Result;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is zero are compared absolutely at this scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, floor)` over
    /// the checked coordinates.
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    /// Coordinates whose difference stencil straddles a non-differentiable
    /// point (an `abs` or `max` switching branch).
    pub excluded: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn record<F>(f: &F, x: &[f64]) -> Result<(f64, Vec<i8>, Tape, Var, Var)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.to_vec(), x.len(), 1)?;
    let root = f(&mut tape, leaf)?;
    let value = tape.scalar(root)?;
    let sig = tape.branch_signature();
    Ok((value, sig, tape, leaf, root))
}

/// Compares reverse-mode gradients of `f` at `x` with central differences.
///
/// `f` receives `x` as a `len x 1` leaf and must return a scalar.
pub fn finite_difference_check<F>(x: &[f64], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(crate::Error::invalid("finite-difference step must be positive"));
    }
    let (_, base_sig, tape, leaf, root) = record(&f, x)?;
    let analytic = tape.backward(root)?.wrt(leaf)?;
    drop(tape);

    let mut numeric = Vec::with_capacity(x.len());
    let mut excluded = Vec::new();
    let mut max_rel_error = 0.0_f64;
    let mut worst_coordinate = None;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let (fp, sig_p, ..) = record(&f, &probe)?;
        probe[i] = x[i] - step;
        let (fm, sig_m, ..) = record(&f, &probe)?;
        probe[i] = x[i];

        let n = (fp - fm) / (2.0 * step);
        numeric.push(n);
        if sig_p != base_sig || sig_m != base_sig {
            excluded.push(i);
            continue;
        }
        let a = analytic[i];
        let denom = a.abs().max(n.abs()).max(REL_ERROR_FLOOR);
        let rel = (a - n).abs() / denom;
        if rel > max_rel_error || worst_coordinate.is_none() {
            max_rel_error = max_rel_error.max(rel);
            worst_coordinate = Some(i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_coordinate,
        checked: x.len() - excluded.len(),
        excluded,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_function_is_exact() {
        let x = [1.0, -2.0, 3.5];
        let r = finite_difference_check(&x, 1e-4, |t, v| {
            let w = t.constant(vec![2.0, -1.0, 0.5], 3, 1)?;
            let p = t.mul(v, w)?;
            t.sum(p)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn l1_kink_is_excluded() {
        let x = [0.0, 2.0];
        let r = finite_difference_check(&x, 1e-4, |t, v| {
            let a = t.abs(v)?;
            t.sum(a)
        })
        .unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let x = [0.3, -0.8, 1.4];
        let f = |t: &mut Tape, v: Var| -> Result<Var> {
            let e = t.exp(v)?;
            t.sum(e)
        };
        let g = |t: &mut Tape, v: Var| -> Result<Var> {
            let s = t.square(v)?;
            t.sum(s)
        };
        let both = super::super::evaluate(&x, |t, v| {
            let a = f(t, v)?;
            let b = g(t, v)?;
            t.add(a, b)
        })
        .unwrap();
        let ef = super::super::evaluate(&x, f).unwrap();
        let eg = super::super::evaluate(&x, g).unwrap();
        for i in 0..3 {
            assert!((both.gradient[i] - ef.gradient[i] - eg.gradient[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(finite_difference_check(&[1.0], 0.0, |t, v| t.sum(v)).is_err());
    }
}
