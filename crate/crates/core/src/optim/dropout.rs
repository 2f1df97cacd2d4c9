use rand::{Rng, RngCore};

use crate::diffcore::Real;

/// Inverted-dropout multipliers: 0 with probability `rate`, otherwise
/// `1 / (1 − rate)`.
pub fn dropout_mask<F: Real>(n: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<F> {
    if rate <= 0.0 {
        return vec![F::one(); n];
    }
    let keep = F::from_f64(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

/// Applies inverted dropout when `training`; identity otherwise.
pub fn dropout<F: Real>(x: &[F], rate: f64, training: bool, rng: &mut dyn RngCore) -> Vec<F> {
    if !training || rate <= 0.0 {
        return x.to_vec();
    }
    dropout_mask::<F>(x.len(), rate, rng)
        .into_iter()
        .zip(x)
        .map(|(m, &v)| m * v)
        .collect()
}
