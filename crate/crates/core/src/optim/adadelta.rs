use serde::{Deserialize, Serialize};

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaDeltaConfig {
    /// Decay of both running averages.
    pub rho: f64,
    pub epsilon: f64,
    /// Multiplies every update.
    pub lr: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        AdaDeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
            lr: 0.001,
        }
    }
}

impl AdaDeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("adadelta rho = {} must lie in (0, 1)", self.rho)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("adadelta epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate = {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Running averages `E[g²]` and `E[Δx²]`, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDeltaState<F> {
    pub config: AdaDeltaConfig,
    pub sq_grad: Vec<Vec<F>>,
    pub sq_update: Vec<Vec<F>>,
}

impl<F: Real> AdaDeltaState<F> {
    pub fn new(config: AdaDeltaConfig, sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(AdaDeltaState {
            config,
            sq_grad: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            sq_update: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        })
    }

    pub fn for_tensors(config: AdaDeltaConfig, tensors: &[&Tensor<F>]) -> Result<Self> {
        let sizes: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        Self::new(config, &sizes)
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.sq_grad
            .iter()
            .chain(&self.sq_update)
            .flatten()
            .all(|v| v.is_finite() && *v >= F::zero())
    }
}

/// One AdaDelta update, elementwise:
/// `E[g²] ← ρE[g²] + (1−ρ)g²`,
/// `Δx = −lr·√(E[Δx²]+ε)/√(E[g²]+ε)·g`,
/// `E[Δx²] ← ρE[Δx²] + (1−ρ)Δx²`, `x ← x + Δx`.
///
/// Nothing is modified when any gradient is non-finite.
pub fn adadelta_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[Vec<F>],
    state: &mut AdaDeltaState<F>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.sq_grad.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.sq_grad.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.sq_grad[k].len() != g.len() {
            return Err(Error::dim(format!(
                "parameter {k}: {} values, gradient of {}",
                p.len(),
                g.len()
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {k} is {} at element {j}; step rejected",
                g[j]
            )));
        }
    }
    let rho = F::from_f64(state.config.rho);
    let one_minus = F::from_f64(1.0 - state.config.rho);
    let eps = F::from_f64(state.config.epsilon);
    let lr = F::from_f64(state.config.lr);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let eg = &mut state.sq_grad[k];
        let ex = &mut state.sq_update[k];
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j];
            eg[j] = rho * eg[j] + one_minus * gj * gj;
            let dx = -lr * ((ex[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * gj;
            ex[j] = rho * ex[j] + one_minus * dx * dx;
            *x = *x + dx;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(g: f64, steps: usize, cfg: AdaDeltaConfig) -> (Vec<f64>, AdaDeltaState<f64>) {
        let mut x = Tensor::vector(vec![0.0f64]);
        let mut state = AdaDeltaState::new(cfg, &[1]).unwrap();
        let mut deltas = Vec::new();
        for _ in 0..steps {
            let before = x.data()[0];
            adadelta_step(&mut [&mut x], &[vec![g]], &mut state).unwrap();
            deltas.push(x.data()[0] - before);
        }
        (deltas, state)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (d, s) = run(0.0, 3, AdaDeltaConfig::default());
        assert_eq!(d, vec![0.0; 3]);
        assert_eq!(s.sq_grad[0][0], 0.0);
        assert_eq!(s.sq_update[0][0], 0.0);
    }

    #[test]
    fn first_step_reference() {
        let (d, _) = run(1.0, 1, AdaDeltaConfig::default());
        assert!((d[0] - -4.472_091_234_310_838_6e-6).abs() < 1e-15, "{}", d[0]);
    }

    #[test]
    fn steady_state_scale_invariance() {
        let cfg = AdaDeltaConfig::default();
        let (a, _) = run(1.0, 100, cfg);
        let (b, s) = run(10.0, 100, cfg);
        let ratio = b[99] / a[99];
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
        assert!(s.is_finite_nonnegative());
    }

    #[test]
    fn non_finite_gradient_rejected_without_change() {
        let mut x = Tensor::vector(vec![1.0f64, 2.0]);
        let mut state = AdaDeltaState::new(AdaDeltaConfig::default(), &[2]).unwrap();
        let err = adadelta_step(&mut [&mut x], &[vec![0.5, f64::NAN]], &mut state);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(x.data(), &[1.0, 2.0]);
        assert_eq!(state.sq_grad[0], vec![0.0, 0.0]);
    }
}
