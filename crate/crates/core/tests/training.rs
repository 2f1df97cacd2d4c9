use jointslu::data::{batch_examples, make_batches, synth_generate, Example, SynthSpec, Vocab};
use jointslu::model::{Aggregator, JointModel, Mode, ModelConfig, SparsityConfig};
use jointslu::optim::{init_params, sized_config, train, AdaDeltaConfig, TrainConfig, Trainer};
use jointslu::Error;

fn ex(tokens: &str, tags: &str, intent: &str) -> Example {
    Example::new(
        tokens.split(' ').map(String::from).collect(),
        Some(tags.split(' ').map(String::from).collect()),
        Some(intent.to_string()),
    )
}

fn small(mode: Mode) -> ModelConfig {
    ModelConfig {
        mode,
        word_embed_dim: 16,
        tag_embed_dim: 8,
        hidden_dim: 16,
        window_sizes: vec![3],
        filters_per_window: 12,
        aggregator: Aggregator::Attention,
        sparsity: Some(SparsityConfig { rho: 0.05, beta: 0.5, epsilon: 1e-6 }),
        dropout_rate: 0.0,
        ..Default::default()
    }
}

#[test]
fn one_sentence_overfits() {
    let corpus = vec![ex(
        "i want to go from denver to boston today",
        "O O O O O B-FromCity O B-ToCity B-Date",
        "Flight",
    )];
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let mut config = small(Mode::Joint);
    config.sparsity = None;
    let config = sized_config(&config, &vocab).unwrap();
    let model = JointModel::new(config.clone(), init_params::<f32>(&config, 0, 0.05).unwrap()).unwrap();
    let adadelta = AdaDeltaConfig { lr: 1.0, ..Default::default() };
    let mut trainer = Trainer::new(model, adadelta, 0).unwrap();
    let batch = batch_examples(&[&corpus[0]], &vocab).unwrap();
    let losses: Vec<f32> = (0..20).map(|_| trainer.step(&batch).unwrap().total).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    assert!(trainer.state.is_finite_nonnegative());
}

#[test]
fn fifty_sentences_make_four_batches() {
    let corpus: Vec<Example> = (0..50).map(|i| ex(&format!("w{i} x"), "O O", "A")).collect();
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let sizes: Vec<usize> = make_batches(&corpus, &vocab, 16, true, 3)
        .unwrap()
        .iter()
        .map(|b| b.size())
        .collect();
    assert_eq!(sizes, vec![16, 16, 16, 2]);
}

fn synth(n: usize, seed: u64) -> Vec<Example> {
    synth_generate(&SynthSpec::atis_like(seed, n)).unwrap().examples
}

#[test]
fn training_is_deterministic() {
    let corpus = synth(80, 1);
    let dev = synth(20, 2);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let mut config = small(Mode::Joint);
    config.dropout_rate = 0.5;
    let cfg = TrainConfig { epochs: 2, seed: 11, ..Default::default() };
    let run = || train(&config, &cfg, &vocab, &corpus, Some(&dev), None, |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
    let other = train(&config, &TrainConfig { seed: 12, ..cfg.clone() }, &vocab, &corpus, None, None, |_| {}).unwrap();
    assert_ne!(a.model.params, other.model.params);
}

#[test]
fn penalty_is_optimized() {
    let corpus = synth(32, 3);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let config = sized_config(&small(Mode::Joint), &vocab).unwrap();
    let model = JointModel::new(config.clone(), init_params::<f32>(&config, 0, 0.05).unwrap()).unwrap();
    let batch = batch_examples(&corpus.iter().collect::<Vec<_>>(), &vocab).unwrap();
    let before = model.loss(&batch).unwrap().sparsity_penalty;
    let mut trainer = Trainer::new(model, AdaDeltaConfig { lr: 1.0, ..Default::default() }, 0).unwrap();
    for _ in 0..60 {
        trainer.step(&batch).unwrap();
    }
    let after = trainer.model.loss(&batch).unwrap().sparsity_penalty;
    assert!(after <= before, "{before} -> {after}");
}

#[test]
fn labels_checked_before_training() {
    let mut corpus = synth(10, 4);
    corpus[3].tags = None;
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    let r = train(&small(Mode::Joint), &cfg, &vocab, &corpus, None, None, |_| {});
    assert!(matches!(r, Err(Error::Data(_))));
    // latent and classifier modes ignore tags
    let mut latent = small(Mode::Latent);
    latent.sparsity = None;
    assert!(train(&latent, &cfg, &vocab, &corpus, None, None, |_| {}).is_ok());
    let mut tagger = small(Mode::Tagger);
    tagger.sparsity = None;
    let mut untagged_intents = synth(10, 4);
    untagged_intents[0].intent = None;
    let vocab = Vocab::build(&untagged_intents, 1).unwrap();
    assert!(train(&tagger, &cfg, &vocab, &untagged_intents, None, None, |_| {}).is_ok());
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let corpus = synth(64, 5);
    let dev = synth(16, 6);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        patience: Some(1),
        adadelta: AdaDeltaConfig { lr: 1.0, ..Default::default() },
        ..Default::default()
    };
    let mut seen = Vec::new();
    let out = train(&small(Mode::Joint), &cfg, &vocab, &corpus, Some(&dev), None, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen.len(), out.history.len());
    assert!(out.best_epoch >= 1 && out.best_epoch <= out.history.len());
    let best = &out.history[out.best_epoch - 1];
    let best_err = best.dev_intent_error.unwrap();
    assert!(out.history.iter().all(|r| r.dev_intent_error.unwrap() >= best_err));
}
