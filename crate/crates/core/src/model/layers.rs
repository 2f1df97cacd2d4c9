//! Building blocks of the joint network, each usable on its own.
//!
//! Tape-based blocks work on row-stacked inputs: every row is one sentence
//! (or one token), so the same code serves a single example and a batch.

use crate::diffcore::{argmax, sigmoid, softmax, Real, Reduce, Tape, Var};
use crate::error::{Error, Result};

use super::config::Aggregator;

/// Context vector for position `t` with half-width `k`:
/// `[x_{t−k}, …, x_{t+k}, T_{t−k}, …, T_{t−1}]`.
///
/// `words` holds the sentence's word vectors; positions outside the
/// sentence use `pad`. `labels[j]` is the label-channel vector of position
/// `j` (a tag embedding, or `h_j` in latent mode) and must cover every
/// position before `t`; positions before the sentence start use `start`.
pub fn context_window<F: Real>(
    words: &[&[F]],
    pad: &[F],
    labels: &[&[F]],
    start: &[F],
    t: usize,
    k: usize,
) -> Result<Vec<F>> {
    let n = words.len();
    if t >= n {
        return Err(Error::Index(format!("position {t} in a sentence of length {n}")));
    }
    if labels.len() < t {
        return Err(Error::InvalidInput(format!(
            "label channel covers {} positions, window at {t} needs {t}",
            labels.len()
        )));
    }
    let mut out = Vec::new();
    for offset in -(k as isize)..=(k as isize) {
        let pos = t as isize + offset;
        if pos >= 0 && (pos as usize) < n {
            out.extend_from_slice(words[pos as usize]);
        } else {
            out.extend_from_slice(pad);
        }
    }
    for back in (1..=k).rev() {
        if t >= back {
            out.extend_from_slice(labels[t - back]);
        } else {
            out.extend_from_slice(start);
        }
    }
    Ok(out)
}

/// Word indices of the `2k + 1` window around `t`, `pad` outside `0..len`.
pub fn window_word_indices(words: &[usize], len: usize, t: usize, k: usize, pad: usize) -> Vec<usize> {
    (-(k as isize)..=(k as isize))
        .map(|o| {
            let pos = t as isize + o;
            if pos >= 0 && (pos as usize) < len {
                words[pos as usize]
            } else {
                pad
            }
        })
        .collect()
}

/// Convolution features: `relu(W·x_{t,k} + b)` per filter bank, concatenated
/// across banks. `windows[i]` must match `banks[i]`.
pub fn conv_features<F: Real>(
    tape: &mut Tape<F>,
    windows: &[Var],
    banks: &[(Var, Var)],
) -> Result<Var> {
    if windows.len() != banks.len() || windows.is_empty() {
        return Err(Error::Dimension(format!(
            "{} window inputs for {} filter banks",
            windows.len(),
            banks.len()
        )));
    }
    let mut feats = Vec::with_capacity(windows.len());
    for (&x, &(w, b)) in windows.iter().zip(banks) {
        let pre = tape.affine(x, w, Some(b))?;
        feats.push(tape.relu(pre));
    }
    if feats.len() == 1 {
        Ok(feats[0])
    } else {
        tape.concat(&feats)
    }
}

/// Nodes produced by one recurrence step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub h: Var,
    pub c: Var,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub candidate: Var,
}

/// Values of one recurrence step for a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct StepState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
    pub input_gate: Vec<F>,
    pub forget_gate: Vec<F>,
    pub output_gate: Vec<F>,
    pub candidate: Vec<F>,
}

impl StepVars {
    pub fn state<F: Real>(&self, tape: &Tape<F>, row: usize) -> StepState<F> {
        let get = |v: Var| tape.value(v).row(row).to_vec();
        StepState {
            h: get(self.h),
            c: get(self.c),
            input_gate: get(self.input_gate),
            forget_gate: get(self.forget_gate),
            output_gate: get(self.output_gate),
            candidate: get(self.candidate),
        }
    }
}

/// One LSTM step:
/// `[i; f; o; ĉ] = [σ; σ; σ; tanh](W·[x, h_prev] + b)`,
/// `c = f ⊙ c_prev + i ⊙ ĉ`, `h = o ⊙ tanh(c)`.
pub fn lstm_step<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weight: Var,
    bias: Var,
) -> Result<StepVars> {
    let d = tape.value(bias).len() / 4;
    if tape.value(bias).len() != 4 * d || d == 0 {
        return Err(Error::Dimension(format!(
            "lstm bias of length {} is not 4·d",
            tape.value(bias).len()
        )));
    }
    if tape.value(h_prev).as_matrix_dims().1 != d || tape.value(c_prev).as_matrix_dims().1 != d {
        return Err(Error::Dimension(format!(
            "lstm state {:?}/{:?} does not match d = {d}",
            tape.value(h_prev).shape(),
            tape.value(c_prev).shape()
        )));
    }
    let input = tape.concat(&[x, h_prev])?;
    let z = tape.affine(input, weight, Some(bias))?;
    let zi = tape.slice_cols(z, 0, d)?;
    let zf = tape.slice_cols(z, d, d)?;
    let zo = tape.slice_cols(z, 2 * d, d)?;
    let zc = tape.slice_cols(z, 3 * d, d)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let o = tape.sigmoid(zo);
    let candidate = tape.tanh(zc);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, candidate)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c);
    let h = tape.mul(o, squashed)?;
    Ok(StepVars {
        h,
        c,
        input_gate: i,
        forget_gate: f,
        output_gate: o,
        candidate,
    })
}

#[derive(Debug)]
pub struct TagDecode<F> {
    pub logits: Var,
    /// Softmax over tags, one row per input row.
    pub distribution: Vec<Vec<F>>,
    /// Argmax tag per row (ties to the lowest index).
    pub chosen: Vec<usize>,
    /// Summed NLL of the gold tags, when given.
    pub nll: Option<Var>,
}

/// Tag distribution `softmax(W_T·h + b)` for each row of `h`.
pub fn decode_tag<F: Real>(
    tape: &mut Tape<F>,
    h: Var,
    weight: Var,
    bias: Var,
    gold: Option<&[usize]>,
) -> Result<TagDecode<F>> {
    let logits = tape.affine(h, weight, Some(bias))?;
    let (distribution, chosen) = row_softmax(tape, logits);
    let nll = gold.map(|g| tape.softmax_nll(logits, g)).transpose()?;
    Ok(TagDecode {
        logits,
        distribution,
        chosen,
        nll,
    })
}

fn row_softmax<F: Real>(tape: &Tape<F>, logits: Var) -> (Vec<Vec<F>>, Vec<usize>) {
    let value = tape.value(logits);
    let (rows, _) = value.as_matrix_dims();
    let mut dists = Vec::with_capacity(rows);
    let mut chosen = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = value.row(r);
        chosen.push(argmax(row));
        dists.push(softmax(row));
    }
    (dists, chosen)
}

#[derive(Debug, Clone, Copy)]
pub struct Aggregated {
    /// `[num_segments, d]` sentence representations.
    pub sentence: Var,
    /// Attention weight `ψ(h_t·α)` per row of the hidden matrix.
    pub weights: Option<Var>,
}

/// Summarizes the rows of `hidden` (`[rows, d]`) belonging to each sentence.
///
/// `sentence_of[r]` names the sentence of row `r`. Attention computes
/// `Σ_t sigmoid(h_t·α)·h_t` without normalizing the weights.
pub fn aggregate<F: Real>(
    tape: &mut Tape<F>,
    hidden: Var,
    sentence_of: &[usize],
    sentences: usize,
    aggregator: Aggregator,
    alpha: Option<Var>,
) -> Result<Aggregated> {
    let mut counts = vec![0usize; sentences];
    for &s in sentence_of {
        if s >= sentences {
            return Err(Error::Index(format!("sentence {s} of {sentences}")));
        }
        counts[s] += 1;
    }
    if sentences == 0 || counts.contains(&0) {
        return Err(Error::InvalidInput(
            "aggregation needs at least one valid position per sentence".into(),
        ));
    }
    match aggregator {
        Aggregator::Max => Ok(Aggregated {
            sentence: tape.segment_reduce(hidden, sentence_of, sentences, Reduce::Max)?,
            weights: None,
        }),
        Aggregator::Avg => Ok(Aggregated {
            sentence: tape.segment_reduce(hidden, sentence_of, sentences, Reduce::Mean)?,
            weights: None,
        }),
        Aggregator::Attention => {
            let alpha = alpha.ok_or_else(|| {
                Error::InvalidInput("attention aggregation without an attention vector".into())
            })?;
            let scores = tape.row_dot(hidden, alpha)?;
            let weights = tape.sigmoid(scores);
            let weighted = tape.mul_column(hidden, weights)?;
            let sentence = tape.segment_reduce(weighted, sentence_of, sentences, Reduce::Sum)?;
            Ok(Aggregated {
                sentence,
                weights: Some(weights),
            })
        }
    }
}

#[derive(Debug)]
pub struct Classification<F> {
    pub logits: Var,
    pub distribution: Vec<Vec<F>>,
    pub predicted: Vec<usize>,
    pub nll: Option<Var>,
}

/// Intent distribution `softmax(W_C·ĥ + b)` for each sentence row.
pub fn classify_sentence<F: Real>(
    tape: &mut Tape<F>,
    sentence: Var,
    weight: Var,
    bias: Var,
    gold: Option<&[usize]>,
) -> Result<Classification<F>> {
    let logits = tape.affine(sentence, weight, Some(bias))?;
    let (distribution, predicted) = row_softmax(tape, logits);
    let nll = gold.map(|g| tape.softmax_nll(logits, g)).transpose()?;
    Ok(Classification {
        logits,
        distribution,
        predicted,
        nll,
    })
}

/// Mean attention per time position over the sentences long enough to have
/// that position, clamped into `(eps, 1 − eps)`.
///
/// `weights[i]` holds the per-token weights of sentence `i`.
pub fn batch_attention_mean<F: Real>(weights: &[Vec<F>], eps: F) -> Vec<F> {
    let longest = weights.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|t| {
            let (sum, count) = weights
                .iter()
                .filter_map(|w| w.get(t))
                .fold((F::zero(), 0usize), |(s, c), &w| (s + w, c + 1));
            let mean = sum / F::from_f64(count as f64);
            mean.max(eps).min(F::one() - eps)
        })
        .collect()
}

/// `KL(ρ ‖ ρ̂) = ρ ln(ρ/ρ̂) + (1 − ρ) ln((1 − ρ)/(1 − ρ̂))`.
pub fn kl_divergence(rho: f64, rho_hat: f64) -> f64 {
    rho * (rho / rho_hat).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - rho_hat)).ln()
}

/// `dKL/dρ̂ = −ρ/ρ̂ + (1 − ρ)/(1 − ρ̂)`.
pub fn kl_divergence_grad(rho: f64, rho_hat: f64) -> f64 {
    -rho / rho_hat + (1.0 - rho) / (1.0 - rho_hat)
}

/// `Σ_t KL(ρ ‖ ρ̂_t)`.
pub fn kl_sparsity(rho: f64, rho_hat: &[f64]) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("rho = {rho} must lie in (0, 1)")));
    }
    Ok(rho_hat.iter().map(|&q| kl_divergence(rho, q)).sum())
}

/// Attention weight `sigmoid(h·α)` computed directly from values.
pub fn attention_weight<F: Real>(h: &[F], alpha: &[F]) -> F {
    sigmoid(crate::diffcore::dot(h, alpha))
}
