//! Batched forward pass, joint loss and inference.
//!
//! Only valid positions are computed. At step `t` the active sentences are
//! those longer than `t`, kept in sentence order, so padding never enters
//! the graph and appending pad columns leaves every number unchanged.

use rand::RngCore;

use super::config::{Mode, ModelConfig};
use super::layers::{self, StepVars};
use super::params::ModelParams;
use crate::data::{Batch, PAD};
use crate::diffcore::{Real, Reduce, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::optim::dropout_mask;

/// Source of the previous tags in the convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagFeed {
    /// Gold tags (teacher forcing).
    Gold,
    /// The model's own greedy predictions.
    Predicted,
}

pub struct RunOptions<'a> {
    pub feed: TagFeed,
    pub with_loss: bool,
    /// Applies the configured dropout rate when set.
    pub dropout: Option<&'a mut dyn RngCore>,
}

impl<'a> RunOptions<'a> {
    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        RunOptions {
            feed: TagFeed::Gold,
            with_loss: true,
            dropout: Some(rng),
        }
    }

    /// Teacher-forced loss without dropout.
    pub fn loss() -> Self {
        RunOptions {
            feed: TagFeed::Gold,
            with_loss: true,
            dropout: None,
        }
    }

    pub fn inference() -> Self {
        RunOptions {
            feed: TagFeed::Predicted,
            with_loss: false,
            dropout: None,
        }
    }
}

/// The three loss components and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<F> {
    pub seq_loss: F,
    pub sent_loss: F,
    pub sparsity_penalty: F,
    pub beta: F,
    pub total: F,
}

impl<F: Real> LossBreakdown<F> {
    /// `(seq + sent) + β·penalty`, evaluated the way the graph does.
    pub fn recombined(&self) -> F {
        (self.seq_loss + self.sent_loss) + self.beta * self.sparsity_penalty
    }
}

/// Which scalar to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossPart {
    Total,
    Sequence,
    Sentence,
    Penalty,
}

#[derive(Clone, Copy, Debug)]
struct LossVars {
    seq: Var,
    sent: Var,
    penalty: Var,
    total: Var,
}

struct ParamVars {
    all: Vec<Var>,
    words: Var,
    tags: Option<Var>,
    conv: Vec<(usize, Var, Var)>,
    lstm: (Var, Var),
    tag_head: Option<(Var, Var)>,
    alpha: Option<Var>,
    intent_head: Option<(Var, Var)>,
}

impl ParamVars {
    fn record<F: Real>(tape: &mut Tape<F>, config: &ModelConfig, params: &ModelParams<F>) -> Self {
        let all: Vec<Var> = params
            .tensors()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let mut it = all.iter().copied();
        let mut next = || it.next().expect("layout");
        let words = next();
        let tags = config.mode.has_tag_head().then(&mut next);
        let conv = config
            .window_sizes
            .iter()
            .map(|&w| (w, next(), next()))
            .collect();
        let lstm = (next(), next());
        let tag_head = config.mode.has_tag_head().then(|| (next(), next()));
        let alpha = config.uses_attention().then(&mut next);
        let intent_head = config.mode.has_intent_head().then(|| (next(), next()));
        ParamVars {
            all,
            words,
            tags,
            conv,
            lstm,
            tag_head,
            alpha,
            intent_head,
        }
    }
}

/// Everything produced by one forward pass over a batch.
pub struct BatchRun<F> {
    tape: Tape<F>,
    params: ParamVars,
    loss_vars: Option<LossVars>,
    pub loss: Option<LossBreakdown<F>>,
    /// Greedy tag per valid position.
    pub tags: Option<Vec<Vec<usize>>>,
    pub intents: Option<Vec<usize>>,
    pub intent_distributions: Option<Vec<Vec<F>>>,
    /// `ψ(h_t·α)` per valid position.
    pub attention: Option<Vec<Vec<F>>>,
    /// Clamped batch-mean attention per time position.
    pub rho_hat: Option<Vec<F>>,
    hidden: Var,
    rows: Vec<Vec<usize>>,
    steps: Vec<StepVars>,
}

impl<F: Real> BatchRun<F> {
    pub fn tape(&self) -> &Tape<F> {
        &self.tape
    }

    /// `h_t` of sentence `i`.
    pub fn hidden(&self, i: usize, t: usize) -> &[F] {
        self.tape.value(self.hidden).row(self.rows[i][t])
    }

    pub fn sentence_len(&self, i: usize) -> usize {
        self.rows[i].len()
    }

    /// Every input, forget and output gate value computed in the pass.
    pub fn gate_values(&self) -> Vec<F> {
        self.steps
            .iter()
            .flat_map(|s| [s.input_gate, s.forget_gate, s.output_gate])
            .flat_map(|v| self.tape.value(v).data().to_vec())
            .collect()
    }

    pub fn candidate_values(&self) -> Vec<F> {
        self.steps
            .iter()
            .flat_map(|s| self.tape.value(s.candidate).data().to_vec())
            .collect()
    }

    /// Gradient of the total loss for every parameter, in layout order.
    pub fn gradients(&self) -> Result<Vec<Vec<F>>> {
        self.gradients_of(LossPart::Total)
    }

    pub fn gradients_of(&self, part: LossPart) -> Result<Vec<Vec<F>>> {
        let vars = self
            .loss_vars
            .ok_or_else(|| Error::InvalidInput("forward pass ran without a loss".into()))?;
        let target = match part {
            LossPart::Total => vars.total,
            LossPart::Sequence => vars.seq,
            LossPart::Sentence => vars.sent,
            LossPart::Penalty => vars.penalty,
        };
        let grads = self.tape.backward(target)?;
        Ok(self
            .params
            .all
            .iter()
            .map(|&v| match grads.get(v) {
                Some(g) => g.to_vec(),
                None => vec![F::zero(); self.tape.value(v).len()],
            })
            .collect())
    }
}

fn check_labels(config: &ModelConfig, batch: &Batch, lengths: &[usize], opts: &RunOptions) -> Result<()> {
    let mode = config.mode;
    let gold_tags_needed =
        mode.has_tag_head() && (opts.with_loss || opts.feed == TagFeed::Gold);
    if gold_tags_needed {
        let tags = batch.tags.as_ref().ok_or_else(|| {
            Error::Data(format!("{} mode needs slot tags for every sentence", mode.name()))
        })?;
        for (i, (row, &n)) in tags.iter().zip(lengths).enumerate() {
            if let Some(&bad) = row[..n].iter().find(|&&t| t >= config.num_tags) {
                return Err(Error::Data(format!(
                    "sentence {i}: tag index {bad} with {} tags",
                    config.num_tags
                )));
            }
        }
    }
    if opts.with_loss && mode.needs_intents() {
        let intents = batch.intents.as_ref().ok_or_else(|| {
            Error::Data(format!("{} mode needs an intent for every sentence", mode.name()))
        })?;
        if let Some(&bad) = intents.iter().find(|&&c| c >= config.num_intents) {
            return Err(Error::Data(format!(
                "intent index {bad} with {} intents",
                config.num_intents
            )));
        }
    }
    Ok(())
}

/// Runs the network over `batch`.
pub fn run_batch<F: Real>(
    config: &ModelConfig,
    params: &ModelParams<F>,
    batch: &Batch,
    mut opts: RunOptions,
) -> Result<BatchRun<F>> {
    let lengths = batch.valid_lengths()?;
    let m = lengths.len();
    if m == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if let Some(i) = lengths.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("sentence {i} has no tokens")));
    }
    check_labels(config, batch, &lengths, &opts)?;

    let mode = config.mode;
    let d = config.hidden_dim;
    let bos = config.num_tags;
    let max_len = *lengths.iter().max().expect("nonempty");

    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, config, params);

    // active[t]: sentences with a token at t; slot[t][i]: row of sentence i at step t
    let active: Vec<Vec<usize>> = (0..max_len)
        .map(|t| (0..m).filter(|&i| lengths[i] > t).collect())
        .collect();
    let mut slot = vec![vec![usize::MAX; m]; max_len];
    for (t, act) in active.iter().enumerate() {
        for (r, &i) in act.iter().enumerate() {
            slot[t][i] = r;
        }
    }

    let mut steps: Vec<StepVars> = Vec::with_capacity(max_len);
    let mut tag_logits = Vec::new();
    let mut predicted: Vec<Vec<usize>> = vec![Vec::new(); m];

    for t in 0..max_len {
        let act = &active[t];
        let mt = act.len();
        let mut windows = Vec::with_capacity(pv.conv.len());
        let mut banks = Vec::with_capacity(pv.conv.len());
        for &(w, wv, bv) in &pv.conv {
            let k = w / 2;
            let mut idx = Vec::with_capacity(mt * w);
            for &i in act {
                idx.extend(layers::window_word_indices(&batch.words[i], lengths[i], t, k, PAD));
            }
            let mut parts = vec![tape.gather_rows(pv.words, &idx, w)?];
            if k > 0 {
                match mode {
                    Mode::Joint | Mode::Tagger => {
                        let table = pv.tags.expect("tag embeddings");
                        let mut tidx = Vec::with_capacity(mt * k);
                        for &i in act {
                            for back in (1..=k).rev() {
                                tidx.push(if t < back {
                                    bos
                                } else {
                                    let pos = t - back;
                                    match opts.feed {
                                        TagFeed::Gold => batch.tags.as_ref().expect("checked")[i][pos],
                                        TagFeed::Predicted => predicted[i][pos],
                                    }
                                });
                            }
                        }
                        parts.push(tape.gather_rows(table, &tidx, k)?);
                    }
                    Mode::Latent => {
                        for back in (1..=k).rev() {
                            if t < back {
                                parts.push(tape.constant(Tensor::zeros(vec![mt, d])));
                            } else {
                                let pos = t - back;
                                let rows: Vec<usize> = act.iter().map(|&i| slot[pos][i]).collect();
                                parts.push(gather_state(&mut tape, steps[pos].h, &rows, active[pos].len())?);
                            }
                        }
                    }
                    Mode::Classifier => {}
                }
            }
            let window = if parts.len() == 1 {
                parts[0]
            } else {
                tape.concat(&parts)?
            };
            windows.push(window);
            banks.push((wv, bv));
        }
        let mut x = layers::conv_features(&mut tape, &windows, &banks)?;
        if let Some(rng) = opts.dropout.as_deref_mut() {
            if config.dropout_rate > 0.0 {
                let cols = config.conv_out_dim();
                let mask = dropout_mask::<F>(mt * cols, config.dropout_rate, rng);
                let mask = tape.constant(Tensor::new(vec![mt, cols], mask)?);
                x = tape.mul(x, mask)?;
            }
        }
        let (h_prev, c_prev) = if t == 0 {
            (
                tape.constant(Tensor::zeros(vec![mt, d])),
                tape.constant(Tensor::zeros(vec![mt, d])),
            )
        } else {
            let rows: Vec<usize> = act.iter().map(|&i| slot[t - 1][i]).collect();
            let prev = steps[t - 1];
            let n_prev = active[t - 1].len();
            (
                gather_state(&mut tape, prev.h, &rows, n_prev)?,
                gather_state(&mut tape, prev.c, &rows, n_prev)?,
            )
        };
        let step = layers::lstm_step(&mut tape, x, h_prev, c_prev, pv.lstm.0, pv.lstm.1)?;
        steps.push(step);
        if let Some((wt, bt)) = pv.tag_head {
            let dec = layers::decode_tag(&mut tape, step.h, wt, bt, None)?;
            for (&i, &tag) in act.iter().zip(&dec.chosen) {
                predicted[i].push(tag);
            }
            tag_logits.push(dec.logits);
        }
    }

    // packed rows in step-major order
    let mut sentence_of = Vec::new();
    let mut time_of = Vec::new();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (t, act) in active.iter().enumerate() {
        for &i in act {
            rows[i].push(sentence_of.len());
            sentence_of.push(i);
            time_of.push(t);
        }
    }
    let hs: Vec<Var> = steps.iter().map(|s| s.h).collect();
    let hidden = if hs.len() == 1 {
        hs[0]
    } else {
        tape.concat_rows(&hs)?
    };
    let inv_m = F::from_f64(1.0 / m as f64);
    let zero = || Tensor::scalar(F::zero());

    let mut seq = None;
    if opts.with_loss && mode.has_tag_head() {
        let gold = batch.tags.as_ref().expect("checked");
        let targets: Vec<usize> = sentence_of
            .iter()
            .zip(&time_of)
            .map(|(&i, &t)| gold[i][t])
            .collect();
        let logits = if tag_logits.len() == 1 {
            tag_logits[0]
        } else {
            tape.concat_rows(&tag_logits)?
        };
        let nll = tape.softmax_nll(logits, &targets)?;
        seq = Some(tape.scale(nll, inv_m));
    }

    let mut sent = None;
    let mut intents = None;
    let mut intent_distributions = None;
    let mut attention = None;
    let mut rho_hat_values = None;
    let mut penalty = None;
    if let Some((wc, bc)) = pv.intent_head {
        let agg = layers::aggregate(&mut tape, hidden, &sentence_of, m, config.aggregator, pv.alpha)?;
        let gold = if opts.with_loss {
            Some(batch.intents.as_ref().expect("checked").as_slice())
        } else {
            None
        };
        let cls = layers::classify_sentence(&mut tape, agg.sentence, wc, bc, gold)?;
        if let Some(nll) = cls.nll {
            sent = Some(tape.scale(nll, inv_m));
        }
        intents = Some(cls.predicted);
        intent_distributions = Some(cls.distribution);
        if let Some(weights) = agg.weights {
            let wv = tape.value(weights).data();
            attention = Some(
                rows.iter()
                    .map(|r| r.iter().map(|&p| wv[p]).collect::<Vec<F>>())
                    .collect::<Vec<_>>(),
            );
            let rho_hat = tape.segment_reduce(weights, &time_of, max_len, Reduce::Mean)?;
            let beta = config.beta();
            let sparsity = config.sparsity.unwrap_or_default();
            let eps = F::from_f64(sparsity.epsilon);
            rho_hat_values = Some(
                tape.value(rho_hat)
                    .data()
                    .iter()
                    .map(|&q| q.max(eps).min(F::one() - eps))
                    .collect(),
            );
            if opts.with_loss && beta > 0.0 {
                penalty = Some(tape.kl_sparsity(rho_hat, F::from_f64(sparsity.rho), eps)?);
            }
        }
    }

    let (loss_vars, loss) = if opts.with_loss {
        let seq = seq.unwrap_or_else(|| tape.constant(zero()));
        let sent = sent.unwrap_or_else(|| tape.constant(zero()));
        let penalty = penalty.unwrap_or_else(|| tape.constant(zero()));
        let beta = F::from_f64(config.beta());
        let data = tape.add(seq, sent)?;
        let weighted = tape.scale(penalty, beta);
        let total = tape.add(data, weighted)?;
        let breakdown = LossBreakdown {
            seq_loss: tape.scalar_value(seq),
            sent_loss: tape.scalar_value(sent),
            sparsity_penalty: tape.scalar_value(penalty),
            beta,
            total: tape.scalar_value(total),
        };
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!("loss is {}", breakdown.total)));
        }
        (
            Some(LossVars {
                seq,
                sent,
                penalty,
                total,
            }),
            Some(breakdown),
        )
    } else {
        (None, None)
    };

    Ok(BatchRun {
        tape,
        params: pv,
        loss_vars,
        loss,
        tags: mode.has_tag_head().then_some(predicted),
        intents,
        intent_distributions,
        attention,
        rho_hat: rho_hat_values,
        hidden,
        rows,
        steps,
    })
}

/// Rows `rows` of a per-step state, skipping the copy when nothing moved.
fn gather_state<F: Real>(tape: &mut Tape<F>, state: Var, rows: &[usize], available: usize) -> Result<Var> {
    if rows.len() == available && rows.iter().enumerate().all(|(r, &s)| r == s) {
        Ok(state)
    } else {
        tape.gather_rows(state, rows, 1)
    }
}

/// Model output for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<F> {
    pub tags: Option<Vec<usize>>,
    pub intent: Option<usize>,
    pub intent_distribution: Option<Vec<F>>,
    pub attention: Option<Vec<F>>,
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct JointModel<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Real> JointModel<F> {
    pub fn new(config: ModelConfig, params: ModelParams<F>) -> Result<Self> {
        let config = config.resolved()?;
        let params = ModelParams::from_tensors(&config, params.tensors().into_iter().cloned().collect())?;
        Ok(JointModel { config, params })
    }

    pub fn run(&self, batch: &Batch, opts: RunOptions) -> Result<BatchRun<F>> {
        run_batch(&self.config, &self.params, batch, opts)
    }

    /// Teacher-forced loss without dropout.
    pub fn loss(&self, batch: &Batch) -> Result<LossBreakdown<F>> {
        Ok(self.run(batch, RunOptions::loss())?.loss.expect("loss requested"))
    }

    /// Greedy inference over a batch, one prediction per sentence.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<Prediction<F>>> {
        let run = self.run(batch, RunOptions::inference())?;
        let m = batch.size();
        Ok((0..m)
            .map(|i| Prediction {
                tags: run.tags.as_ref().map(|t| t[i].clone()),
                intent: run.intents.as_ref().map(|c| c[i]),
                intent_distribution: run.intent_distributions.as_ref().map(|d| d[i].clone()),
                attention: run.attention.as_ref().map(|a| a[i].clone()),
            })
            .collect())
    }

    /// Greedy inference on word indices.
    pub fn predict(&self, words: &[usize]) -> Result<Prediction<F>> {
        let batch = Batch::from_indices(vec![words.to_vec()], None, None)?;
        Ok(self.predict_batch(&batch)?.remove(0))
    }
}
