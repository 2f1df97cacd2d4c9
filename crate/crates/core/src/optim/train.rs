use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adadelta::{adadelta_step, AdaDeltaConfig, AdaDeltaState};
use super::init::{apply_embeddings, init_params};
use crate::data::{make_batches, Batch, EmbeddingOverlay, Example, Vocab};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{JointModel, LossBreakdown, ModelConfig, RunOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub init_range: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Epochs without dev improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    pub adadelta: AdaDeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 30,
            init_range: 0.05,
            seed: 0,
            shuffle: true,
            patience: Some(5),
            adadelta: AdaDeltaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.init_range > 0.0) {
            return Err(Error::Config("init_range must be positive".into()));
        }
        self.adadelta.validate()
    }
}

/// Mean losses over the epoch's batches and the dev metrics after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seq_loss: f64,
    pub sent_loss: f64,
    pub penalty: f64,
    pub total: f64,
    pub dev_slot_f1: Option<f64>,
    pub dev_intent_error: Option<f64>,
    /// Batches whose loss or gradient was not finite and were skipped.
    pub skipped_steps: usize,
}

impl EpochRecord {
    pub const TSV_HEADER: &'static str =
        "epoch\tseq_loss\tsent_loss\tpenalty\ttotal\tdev_slot_f1\tdev_intent_error";

    pub fn tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.epoch,
            self.seq_loss,
            self.sent_loss,
            self.penalty,
            self.total,
            opt(self.dev_slot_f1),
            opt(self.dev_intent_error)
        )
    }
}

pub struct TrainOutcome {
    pub model: JointModel<f32>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (the best on dev, else the last).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Parameters, optimizer state and dropout stream.
pub struct Trainer {
    pub model: JointModel<f32>,
    pub state: AdaDeltaState<f32>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: JointModel<f32>, adadelta: AdaDeltaConfig, seed: u64) -> Result<Self> {
        let state = AdaDeltaState::for_tensors(adadelta, &model.params.tensors())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Trainer { model, state, rng })
    }

    /// Forward with dropout, backward, one AdaDelta update. Returns the loss
    /// measured before the update.
    pub fn step(&mut self, batch: &Batch) -> Result<LossBreakdown<f32>> {
        let run = self.model.run(batch, RunOptions::train(&mut self.rng))?;
        let grads = run.gradients()?;
        let loss = run.loss.expect("loss requested");
        drop(run);
        let mut params = self.model.params.tensors_mut();
        adadelta_step(&mut params, &grads, &mut self.state)?;
        Ok(loss)
    }
}

/// Checks every example carries the labels the mode trains on.
pub fn check_corpus_labels(corpus: &[Example], config: &ModelConfig) -> Result<()> {
    let mode = config.mode;
    for (i, ex) in corpus.iter().enumerate() {
        if ex.tokens.is_empty() {
            return Err(Error::Data(format!("example {i} has no tokens")));
        }
        if mode.needs_tags() && ex.tags.is_none() {
            return Err(Error::Data(format!(
                "example {i} has no slot tags; {} mode trains on them",
                mode.name()
            )));
        }
        if mode.needs_intents() && ex.intent.is_none() {
            return Err(Error::Data(format!(
                "example {i} has no intent; {} mode trains on it",
                mode.name()
            )));
        }
    }
    Ok(())
}

/// Copies vocabulary sizes into the model configuration.
pub fn sized_config(config: &ModelConfig, vocab: &Vocab) -> Result<ModelConfig> {
    let mut c = config.clone();
    c.vocab_size = vocab.num_words();
    c.num_tags = vocab.num_tags();
    c.num_intents = vocab.num_intents();
    if c.mode.has_tag_head() && c.num_tags == 0 {
        return Err(Error::Data("no slot tags in the training corpus".into()));
    }
    if c.mode.has_intent_head() && c.num_intents == 0 {
        return Err(Error::Data("no intents in the training corpus".into()));
    }
    c.resolved()
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Lower is better: dev intent error, ties broken by 1 − slot F1.
fn dev_score(r: &EpochRecord) -> Option<(f64, f64)> {
    let slot = r.dev_slot_f1.map(|f| 1.0 - f);
    match (r.dev_intent_error, slot) {
        (None, None) => None,
        (i, s) => Some((i.unwrap_or(0.0), s.unwrap_or(0.0))),
    }
}

pub fn train(
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocab,
    corpus: &[Example],
    dev: Option<&[Example]>,
    embeddings: Option<&EmbeddingOverlay>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let config = sized_config(model_config, vocab)?;
    check_corpus_labels(corpus, &config)?;
    if let Some(dev) = dev {
        check_corpus_labels(dev, &config)?;
    }
    let mut params = init_params::<f32>(&config, cfg.seed, cfg.init_range)?;
    if let Some(overlay) = embeddings {
        apply_embeddings(&mut params, overlay)?;
    }
    let mut trainer = Trainer::new(JointModel::new(config, params)?, cfg.adadelta, cfg.seed)?;

    let mut history = Vec::new();
    let mut best: Option<((f64, f64), usize, JointModel<f32>)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(corpus, vocab, cfg.batch_size, cfg.shuffle, epoch_seed(cfg.seed, epoch))?;
        let mut sums = [0.0f64; 4];
        let mut done = 0usize;
        let mut skipped = 0usize;
        for batch in &batches {
            match trainer.step(batch) {
                Ok(l) => {
                    sums[0] += l.seq_loss as f64;
                    sums[1] += l.sent_loss as f64;
                    sums[2] += l.sparsity_penalty as f64;
                    sums[3] += l.total as f64;
                    done += 1;
                }
                Err(Error::NonFinite(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if done == 0 {
            return Err(Error::NonFinite(format!(
                "every batch of epoch {epoch} produced a non-finite loss or gradient"
            )));
        }
        let n = done as f64;
        let mut record = EpochRecord {
            epoch,
            seq_loss: sums[0] / n,
            sent_loss: sums[1] / n,
            penalty: sums[2] / n,
            total: sums[3] / n,
            dev_slot_f1: None,
            dev_intent_error: None,
            skipped_steps: skipped,
        };
        if let Some(dev) = dev.filter(|d| !d.is_empty()) {
            let report = evaluate(&trainer.model, vocab, dev)?;
            record.dev_slot_f1 = report.slot.map(|s| s.f1);
            record.dev_intent_error = report.intent.map(|i| i.error_rate);
        }
        on_epoch(&record);
        if let Some(score) = dev_score(&record) {
            if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                best = Some((score, epoch, trainer.model.clone()));
            }
        }
        history.push(record);
        if let (Some(p), Some((_, best_epoch, _))) = (cfg.patience, &best) {
            if epoch - best_epoch >= p && epoch < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
    }
    let last = history.last().map_or(0, |r| r.epoch);
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (trainer.model, last),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_has_seven_fields() {
        let r = EpochRecord {
            epoch: 3,
            seq_loss: 1.0,
            sent_loss: 0.5,
            penalty: 0.0,
            total: 1.5,
            dev_slot_f1: Some(0.9),
            dev_intent_error: None,
            skipped_steps: 0,
        };
        let line = r.tsv();
        assert_eq!(line.split('\t').count(), 7);
        assert_eq!(EpochRecord::TSV_HEADER.split('\t').count(), 7);
        assert!(line.ends_with("\t0.900000\tNA"));
    }

    #[test]
    fn invalid_config_rejected() {
        let c = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
