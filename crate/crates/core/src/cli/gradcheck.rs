use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::diffcore::{grad_check, GradCheckReport, Probe, Tensor};
use crate::error::Result;
use crate::model::{run_batch, Aggregator, Mode, ModelConfig, ModelParams, RunOptions, SparsityConfig};
use crate::optim::init_params;

/// Small attention model: d = 8, four filters of width 3, five tags,
/// three intents, β = 0.5, ρ = 0.05.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        mode: Mode::Joint,
        word_embed_dim: 5,
        tag_embed_dim: 3,
        hidden_dim: 8,
        window_sizes: vec![3],
        filters_per_window: 4,
        aggregator: Aggregator::Attention,
        sparsity: Some(SparsityConfig {
            rho: 0.05,
            beta: 0.5,
            epsilon: 1e-6,
        }),
        dropout_rate: 0.0,
        vocab_size: 11,
        num_tags: 5,
        num_intents: 3,
    }
}

/// Two labeled sentences of lengths 4 and 6 drawn from `seed`.
pub fn tiny_batch(config: &ModelConfig, seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut intents = Vec::new();
    for len in [4, 6] {
        words.push((0..len).map(|_| rng.gen_range(2..config.vocab_size)).collect());
        tags.push((0..len).map(|_| rng.gen_range(0..config.num_tags.max(1))).collect());
        intents.push(rng.gen_range(0..config.num_intents.max(1)));
    }
    Batch::from_indices(words, Some(tags), Some(intents))
}

/// Finite-difference check of the full joint loss in double precision.
///
/// Weights are drawn from a wider range than training uses so that every
/// nonlinearity is exercised away from its linear regime.
pub fn check_model(
    config: &ModelConfig,
    batch: &Batch,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let config = config.clone().resolved()?;
    let params = init_params::<f64>(&config, seed, 0.5)?;
    let names = ModelParams::<f64>::names(&config);
    let initial: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    let eval = |tensors: &[Tensor<f64>], want: bool| -> Result<Probe> {
        let p = ModelParams::from_tensors(&config, tensors.to_vec())?;
        let run = run_batch(&config, &p, batch, RunOptions::loss())?;
        let loss = run.loss.expect("loss requested").total;
        Ok(Probe {
            loss,
            kink_signature: run.tape().kink_signature(),
            gradients: if want { Some(run.gradients()?) } else { None },
        })
    };
    grad_check(eval, &initial, &names, step, tolerance)
}
