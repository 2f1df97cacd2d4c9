use jointslu::cli::gradcheck::{check_model, tiny_batch, tiny_config};
use jointslu::data::Batch;
use jointslu::diffcore::{grad_check, Probe, Tensor};
use jointslu::model::{
    run_batch, Aggregator, JointModel, LossPart, Mode, ModelConfig, ModelParams, RunOptions, SparsityConfig,
};
use jointslu::optim::init_params;
use jointslu::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(mode: Mode, aggregator: Aggregator, beta: Option<f64>) -> ModelConfig {
    ModelConfig {
        mode,
        word_embed_dim: 6,
        tag_embed_dim: 4,
        hidden_dim: 7,
        window_sizes: vec![3, 5],
        filters_per_window: 5,
        aggregator,
        sparsity: beta.map(|beta| SparsityConfig { rho: 0.05, beta, epsilon: 1e-6 }),
        dropout_rate: 0.0,
        vocab_size: 20,
        num_tags: 9,
        num_intents: 6,
    }
    .resolved()
    .unwrap()
}

fn random_batch(config: &ModelConfig, rng: &mut ChaCha8Rng, m: usize) -> Batch {
    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut intents = Vec::new();
    for _ in 0..m {
        let n = rng.gen_range(1..9);
        words.push((0..n).map(|_| rng.gen_range(1..config.vocab_size)).collect());
        tags.push((0..n).map(|_| rng.gen_range(0..config.num_tags)).collect());
        intents.push(rng.gen_range(0..config.num_intents));
    }
    Batch::from_indices(words, Some(tags), Some(intents)).unwrap()
}

#[test]
fn uniform_model_losses() {
    let config = small_config(Mode::Joint, Aggregator::Max, None);
    let model = JointModel::new(config.clone(), ModelParams::<f64>::zeros(&config).unwrap()).unwrap();
    let batch = Batch::from_indices(vec![vec![3, 4, 5, 6]], Some(vec![vec![0, 1, 2, 3]]), Some(vec![2])).unwrap();
    let loss = model.loss(&batch).unwrap();
    assert!((loss.seq_loss - 4.0 * 9f64.ln()).abs() < 1e-12);
    assert!((loss.sent_loss - 6f64.ln()).abs() < 1e-12);
    assert_eq!(loss.sparsity_penalty, 0.0);
}

#[test]
fn loss_is_bitwise_sum_of_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (mode, agg, beta) in [
        (Mode::Joint, Aggregator::Attention, Some(0.7)),
        (Mode::Joint, Aggregator::Attention, Some(0.0)),
        (Mode::Latent, Aggregator::Attention, Some(1.0)),
        (Mode::Joint, Aggregator::Avg, None),
        (Mode::Classifier, Aggregator::Max, None),
        (Mode::Tagger, Aggregator::Max, None),
    ] {
        let config = small_config(mode, agg, beta);
        let params = init_params::<f32>(&config, 9, 0.3).unwrap();
        for _ in 0..5 {
            let batch = random_batch(&config, &mut rng, 4);
            let l = run_batch(&config, &params, &batch, RunOptions::loss()).unwrap().loss.unwrap();
            assert_eq!(l.total.to_bits(), l.recombined().to_bits());
            if beta == Some(0.0) {
                assert_eq!(l.total.to_bits(), (l.seq_loss + l.sent_loss).to_bits());
            }
            if mode == Mode::Latent || mode == Mode::Classifier {
                assert_eq!(l.seq_loss, 0.0);
            }
            if mode == Mode::Tagger {
                assert_eq!(l.sent_loss, 0.0);
            }
        }
    }
}

#[test]
fn pad_columns_change_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (mode, agg, beta) in [
        (Mode::Joint, Aggregator::Attention, Some(1.0)),
        (Mode::Latent, Aggregator::Avg, None),
        (Mode::Joint, Aggregator::Max, None),
    ] {
        let config = small_config(mode, agg, beta);
        let model = JointModel::new(config.clone(), init_params::<f32>(&config, 2, 0.3).unwrap()).unwrap();
        for _ in 0..10 {
            let batch = random_batch(&config, &mut rng, 5);
            let padded = batch.with_extra_padding(rng.gen_range(1..4));
            let (a, b) = (model.loss(&batch).unwrap(), model.loss(&padded).unwrap());
            assert_eq!(a, b);
            assert_eq!(model.predict_batch(&batch).unwrap(), model.predict_batch(&padded).unwrap());
        }
    }
}

#[test]
fn gates_stay_in_range() {
    let config = small_config(Mode::Joint, Aggregator::Max, None);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // large weights push every unit toward saturation
    let params = init_params::<f64>(&config, 1, 5.0).unwrap();
    let run = run_batch(&config, &params, &random_batch(&config, &mut rng, 6), RunOptions::loss()).unwrap();
    // saturated sigmoids may round to the closed interval's ends
    for g in run.gate_values() {
        assert!((0.0..=1.0).contains(&g) && g.is_finite());
    }
    for c in run.candidate_values() {
        assert!(c.abs() <= 1.0);
    }
    let params = init_params::<f64>(&config, 1, 0.5).unwrap();
    let run = run_batch(&config, &params, &random_batch(&config, &mut rng, 6), RunOptions::loss()).unwrap();
    assert!(run.gate_values().iter().all(|&g| g > 0.0 && g < 1.0));
    assert!(run.candidate_values().iter().all(|&c| c.abs() < 1.0));
}

#[test]
fn every_parameter_receives_gradient() {
    let config = small_config(Mode::Joint, Aggregator::Attention, Some(0.5));
    let params = init_params::<f64>(&config, 3, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let run = run_batch(&config, &params, &random_batch(&config, &mut rng, 4), RunOptions::loss()).unwrap();
    let names = ModelParams::<f64>::names(&config);
    for (name, g) in names.iter().zip(run.gradients().unwrap()) {
        assert!(g.iter().any(|&v| v != 0.0), "{name} got no gradient");
    }
    // the intent loss alone reaches the tag embeddings through the windows
    let tag = names.iter().position(|n| n == "tag_embeddings").unwrap();
    let sent = run.gradients_of(LossPart::Sentence).unwrap();
    assert!(sent[tag].iter().any(|&v| v != 0.0));
}

#[test]
fn missing_labels_are_data_errors() {
    let config = small_config(Mode::Joint, Aggregator::Max, None);
    let params = init_params::<f32>(&config, 3, 0.1).unwrap();
    let no_tags = Batch::from_indices(vec![vec![3, 4]], None, Some(vec![1])).unwrap();
    assert!(matches!(run_batch(&config, &params, &no_tags, RunOptions::loss()), Err(Error::Data(_))));
    let bad_intent = Batch::from_indices(vec![vec![3, 4]], Some(vec![vec![0, 0]]), Some(vec![17])).unwrap();
    assert!(matches!(run_batch(&config, &params, &bad_intent, RunOptions::loss()), Err(Error::Data(_))));
    // latent mode trains without tags
    let latent = small_config(Mode::Latent, Aggregator::Max, None);
    let params = init_params::<f32>(&latent, 3, 0.1).unwrap();
    assert!(run_batch(&latent, &params, &no_tags, RunOptions::loss()).is_ok());
}

#[test]
fn full_loss_gradcheck() {
    let config = tiny_config();
    for seed in 0..10 {
        let batch = tiny_batch(&config, seed).unwrap();
        let report = check_model(&config, &batch, seed, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.params);
        assert!(report.params.iter().all(|p| p.checked > 0));
    }
}

#[test]
fn gradcheck_catches_a_wrong_gradient() {
    let config = tiny_config().resolved().unwrap();
    let batch = tiny_batch(&config, 0).unwrap();
    let params = init_params::<f64>(&config, 0, 0.5).unwrap();
    let names = ModelParams::<f64>::names(&config);
    let alpha = names.iter().position(|n| n == "attention").unwrap();
    let initial: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    let eval = |tensors: &[Tensor<f64>], want: bool| {
        let p = ModelParams::from_tensors(&config, tensors.to_vec())?;
        let run = run_batch(&config, &p, &batch, RunOptions::loss())?;
        let gradients = if want {
            let mut g = run.gradients()?;
            g[alpha][0] *= 1.001;
            Some(g)
        } else {
            None
        };
        Ok(Probe {
            loss: run.loss.unwrap().total,
            kink_signature: run.tape().kink_signature(),
            gradients,
        })
    };
    let report = grad_check(eval, &initial, &names, 1e-5, 1e-4).unwrap();
    assert!(!report.passed());
    assert_eq!(report.params[alpha].worst_index, 0);
}
