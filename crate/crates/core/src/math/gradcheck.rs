//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter index where `max_rel_error` was attained.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against `(f(θ+ε·eᵢ) − f(θ−ε·eᵢ)) / 2ε` for every
/// coordinate of `params` and returns the largest relative error.
///
/// `loss` must be deterministic; `params` is restored before returning.
pub fn finite_difference_check<F>(
    mut loss: F,
    params: &mut [f64],
    analytic: &[f64],
    epsilon: f64,
) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "finite-difference epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim(
            "finite_difference_check",
            (params.len(), 1),
            (analytic.len(), 1),
        ));
    }
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + epsilon;
        let plus = loss(params);
        params[i] = orig - epsilon;
        let minus = loss(params);
        params[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while probing parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || i == 0 {
            report = GradCheck {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut w = [3.0];
        let r = finite_difference_check(|p| p[0] * p[0], &mut w, &[6.0], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(w, [3.0]);
    }

    #[test]
    fn constant_loss_zero_gradient() {
        let mut w = [1.0, -2.0, 0.5];
        let r = finite_difference_check(|_| 4.2, &mut w, &[0.0; 3], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let mut w = [1.0, 2.0];
        let r = finite_difference_check(|p| p[0] * p[1], &mut w, &[2.0, 0.0], 1e-5).unwrap();
        assert_eq!(r.worst_index, 1);
        assert!(r.max_rel_error > 0.9);
    }

    #[test]
    fn non_finite_probe_reports_index() {
        let mut w = [1.0, 0.0];
        let loss = |p: &[f64]| if p[1] != 0.0 { f64::NAN } else { p[0] };
        let err = finite_difference_check(loss, &mut w, &[1.0, 0.0], 1e-5).unwrap_err();
        let Error::Numerical(msg) = err else {
            panic!("expected numerical error")
        };
        assert!(msg.contains("parameter 1"), "{msg}");
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut w = [1.0];
        assert!(finite_difference_check(|p| p[0], &mut w, &[1.0], 1e-2).is_err());
        assert!(finite_difference_check(|p| p[0], &mut w, &[1.0], 1e-9).is_err());
    }
}
