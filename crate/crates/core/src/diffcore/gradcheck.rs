//! Central finite-difference verification of analytic gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One evaluation of a scalar function at a parameter point.
#[derive(Debug, Clone)]
pub struct Probe {
    pub loss: f64,
    /// Identifies the smooth piece the point lies on (see
    /// [`Tape::kink_signature`](super::Tape::kink_signature)).
    pub kink_signature: u64,
    /// Analytic gradients, one per parameter, when requested.
    pub gradients: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Plain [`relative_error`] with no allowance for rounding noise.
    pub max_raw_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub checked: usize,
    /// Elements whose ±step perturbation crossed a non-differentiable point.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub step: f64,
    /// Rounding allowance subtracted before `max_rel_error`; see
    /// [`rounding_noise`].
    pub noise: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Relative error left after discounting `noise` from the discrepancy:
/// `max(0, |a − n| − noise) / max(|a|, |n|, 1e-8)`.
pub fn excess_relative_error(analytic: f64, numeric: f64, noise: f64) -> f64 {
    ((analytic - numeric).abs() - noise).max(0.0) / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Bound on the rounding error of a central difference quotient.
///
/// Each loss evaluation is off by a few ulps (taken as `2ε·|L|`), so
/// `(f(x+h) − f(x−h)) / 2h` can be off by `2ε·|L| / h` with an exact
/// gradient. For gradients much smaller than `|L|` this dominates any
/// relative comparison at `h = 1e-5`.
pub fn rounding_noise(loss: f64, step: f64) -> f64 {
    2.0 * f64::EPSILON * loss.abs().max(1.0) / step
}

/// Compares analytic gradients from `eval` against central differences
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every element of every tensor.
///
/// `eval(params, want_gradients)` must be a pure function of `params`.
/// Each element is scored with [`excess_relative_error`] against the
/// [`rounding_noise`] of the base loss. Elements where either perturbed point lands on a different smooth piece
/// than the base point (a relu crossing zero, a max switching winner) are
/// skipped and counted.
pub fn grad_check<E>(
    mut eval: E,
    params: &[Tensor<f64>],
    names: &[String],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    E: FnMut(&[Tensor<f64>], bool) -> Result<Probe>,
{
    if names.len() != params.len() {
        return Err(Error::InvalidInput(format!(
            "{} names for {} parameters",
            names.len(),
            params.len()
        )));
    }
    let base = eval(params, true)?;
    ensure_finite(base.loss, "base point")?;
    let analytic = base
        .gradients
        .ok_or_else(|| Error::InvalidInput("evaluator returned no gradients".into()))?;
    if analytic.len() != params.len() {
        return Err(Error::InvalidInput(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let noise = rounding_noise(base.loss, step);
    let mut point: Vec<Tensor<f64>> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (p, name) in names.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            max_raw_error: 0.0,
            worst_index: 0,
            checked: 0,
            skipped: 0,
        };
        for i in 0..params[p].len() {
            let original = params[p].data()[i];
            point[p].data_mut()[i] = original + step;
            let plus = eval(&point, false)?;
            point[p].data_mut()[i] = original - step;
            let minus = eval(&point, false)?;
            point[p].data_mut()[i] = original;
            ensure_finite(plus.loss, name)?;
            ensure_finite(minus.loss, name)?;

            if plus.kink_signature != base.kink_signature
                || minus.kink_signature != base.kink_signature
            {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * step);
            let err = excess_relative_error(analytic[p][i], numeric, noise);
            check.max_raw_error = check.max_raw_error.max(relative_error(analytic[p][i], numeric));
            check.checked += 1;
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance,
        step,
        noise,
    })
}

fn ensure_finite(loss: f64, at: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "gradient check aborted: loss is {loss} while perturbing {at}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tape;

    fn square(params: &[Tensor<f64>], want: bool) -> Result<Probe> {
        let mut tape = Tape::new();
        let x = tape.param(params[0].clone());
        let y = tape.mul(x, x)?;
        let s = tape.sum(y);
        let gradients = if want {
            Some(vec![tape.backward(s)?.get(x).unwrap().to_vec()])
        } else {
            None
        };
        Ok(Probe {
            loss: tape.scalar_value(s),
            kink_signature: tape.kink_signature(),
            gradients,
        })
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::vector(vec![3.0]);
        let report = grad_check(square, &[x], &["x".into()], 1e-5, 1e-4).unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-9);
    }

    #[test]
    fn relu_kink_is_skipped() {
        let eval = |params: &[Tensor<f64>], want: bool| -> Result<Probe> {
            let mut tape = Tape::new();
            let x = tape.param(params[0].clone());
            let y = tape.relu(x);
            let s = tape.sum(y);
            let gradients = if want {
                Some(vec![tape.backward(s)?.get(x).unwrap().to_vec()])
            } else {
                None
            };
            Ok(Probe {
                loss: tape.scalar_value(s),
                kink_signature: tape.kink_signature(),
                gradients,
            })
        };
        let x = Tensor::vector(vec![0.0, 1.0, -1.0]);
        let report = grad_check(eval, &[x], &["x".into()], 1e-5, 1e-4).unwrap();
        assert_eq!(report.params[0].skipped, 1);
        assert_eq!(report.params[0].checked, 2);
        assert!(report.passed());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let eval = |params: &[Tensor<f64>], _want: bool| -> Result<Probe> {
            let v = params[0].data()[0];
            Ok(Probe {
                loss: if v > 0.0 { f64::NAN } else { v },
                kink_signature: 0,
                gradients: Some(vec![vec![1.0]]),
            })
        };
        let x = Tensor::vector(vec![0.0]);
        let err = grad_check(eval, &[x], &["x".into()], 1e-5, 1e-4).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let eval = |params: &[Tensor<f64>], _want: bool| -> Result<Probe> {
            let v = params[0].data()[0];
            Ok(Probe {
                loss: v * v,
                kink_signature: 0,
                gradients: Some(vec![vec![3.0 * v]]),
            })
        };
        let x = Tensor::vector(vec![2.0]);
        let report = grad_check(eval, &[x], &["x".into()], 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
    }
}
