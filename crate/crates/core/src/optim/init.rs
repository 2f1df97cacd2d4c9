use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EmbeddingOverlay;
use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::model::{param_layout, ModelConfig, ModelParams, ParamKind};

/// Weights i.i.d. uniform on `[−range, range]` from a seeded ChaCha stream in
/// layout order; biases zero.
pub fn init_params<F: Real>(config: &ModelConfig, seed: u64, range: f64) -> Result<ModelParams<F>> {
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::Config(format!("init range {range} must be positive")));
    }
    let config = config.clone().resolved()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = param_layout(&config)
        .into_iter()
        .map(|(_, shape, kind)| match kind {
            ParamKind::Bias => Tensor::zeros(shape),
            ParamKind::Weight => {
                let n = shape.iter().product();
                let data = (0..n)
                    .map(|_| F::from_f64(rng.gen_range(-range..=range)))
                    .collect();
                Tensor::new(shape, data).expect("sized from shape")
            }
        })
        .collect();
    ModelParams::from_tensors(&config, tensors)
}

/// Overwrites word embedding rows with pre-trained vectors.
pub fn apply_embeddings<F: Real>(params: &mut ModelParams<F>, overlay: &EmbeddingOverlay) -> Result<usize> {
    let table = &mut params.word_embeddings;
    let (rows, dim) = table.as_matrix_dims();
    if overlay.coverage() > 0 && overlay.dim != dim {
        return Err(Error::Data(format!(
            "embedding file has {} dimensions, word_embed_dim is {dim}",
            overlay.dim
        )));
    }
    let data = table.data_mut();
    for (row, values) in &overlay.rows {
        if *row >= rows {
            return Err(Error::Index(format!("embedding row {row} of {rows}")));
        }
        for (dst, &v) in data[row * dim..(row + 1) * dim].iter_mut().zip(values) {
            *dst = F::from_f64(v as f64);
        }
    }
    Ok(overlay.coverage())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    fn cfg() -> ModelConfig {
        ModelConfig {
            mode: Mode::Joint,
            word_embed_dim: 6,
            tag_embed_dim: 3,
            hidden_dim: 5,
            window_sizes: vec![3],
            filters_per_window: 4,
            vocab_size: 12,
            num_tags: 5,
            num_intents: 3,
            ..Default::default()
        }
    }

    #[test]
    fn seeded_and_bounded() {
        let a = init_params::<f32>(&cfg(), 9, 0.05).unwrap();
        let b = init_params::<f32>(&cfg(), 9, 0.05).unwrap();
        assert_eq!(a, b);
        let c = init_params::<f32>(&cfg(), 10, 0.05).unwrap();
        assert_ne!(a, c);
        for t in a.tensors() {
            assert!(t.data().iter().all(|v| v.abs() <= 0.05));
        }
        assert!(a.lstm.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_of_many_draws_near_zero() {
        let c = ModelConfig {
            vocab_size: 10_000,
            word_embed_dim: 100,
            ..cfg()
        };
        let p = init_params::<f64>(&c, 1, 0.05).unwrap();
        let w = p.word_embeddings.data();
        assert_eq!(w.len(), 1_000_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = 0.1 / 12f64.sqrt() / 1e3;
        assert!(mean.abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn overlay_dimension_checked() {
        let mut p = init_params::<f32>(&cfg(), 0, 0.05).unwrap();
        let bad = EmbeddingOverlay {
            dim: 300,
            rows: vec![(2, vec![0.0; 300])],
        };
        let err = apply_embeddings(&mut p, &bad).unwrap_err().to_string();
        assert!(err.contains("300") && err.contains('6'), "{err}");
        let good = EmbeddingOverlay {
            dim: 6,
            rows: vec![(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])],
        };
        assert_eq!(apply_embeddings(&mut p, &good).unwrap(), 1);
        assert_eq!(p.word_embeddings.row(2), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
