//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Compare an analytic gradient against central finite differences of
/// `loss` at `params`. Returns the worst relative error over all
/// parameters, with denominator max(|analytic|, |numeric|, 1e-8).
///
/// `loss` must be pure: evaluating it twice at the same point must give
/// the same value (reseed any internal rng per call).
pub fn grad_check<F>(mut loss: F, params: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::Domain(format!("grad_check step must be > 0, got {step}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "grad_check: {} params but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + step;
        let up = loss(&theta)?;
        theta[i] = orig - step;
        let down = loss(&theta)?;
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while probing parameter {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_exact_gradient() {
        let params = vec![0.3, -1.2, 2.5];
        let loss = |t: &[f64]| Ok(0.5 * t.iter().map(|v| v * v).sum::<f64>());
        let analytic = params.clone();
        let err = grad_check(loss, &params, &analytic, 1e-5).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let params = vec![1.0, 2.0];
        let loss = |t: &[f64]| Ok(t[0] * t[0] + t[1]);
        let wrong = vec![0.0, 1.0];
        let err = grad_check(loss, &params, &wrong, 1e-5).unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let r = grad_check(|_| Ok(0.0), &[1.0], &[0.0], 0.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
