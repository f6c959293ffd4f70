use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where the worst error occurred.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Checks the gradient returned by `value_and_grad` at `theta` against
/// central differences with the given `step`.
///
/// `value_and_grad` returns the function value and its analytic gradient;
/// only the value is used for the numeric side.
pub fn grad_check<F>(mut value_and_grad: F, theta: &[f64], step: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = value_and_grad(theta)?;
    if !value.is_finite() {
        return Err(Error::Evaluation { index: usize::MAX });
    }
    if analytic.len() != theta.len() {
        return Err(Error::Dimension {
            op: "grad_check",
            left: (theta.len(), 1),
            right: (analytic.len(), 1),
        });
    }
    let mut probe = theta.to_vec();
    let mut numeric = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let (plus, _) = value_and_grad(&probe)?;
        probe[i] = theta[i] - step;
        let (minus, _) = value_and_grad(&probe)?;
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation { index: i });
        }
        numeric.push((plus - minus) / (2.0 * step));
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        );
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
