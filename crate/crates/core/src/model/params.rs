use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

use super::config::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBank<F> {
    pub window: usize,
    pub linear: Linear<F>,
}

/// All learned weights. Which heads exist depends on the mode.
///
/// The tag embedding table has `num_tags + 1` rows; the last row is the
/// begin-of-sentence tag.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub word_embeddings: Tensor<F>,
    pub tag_embeddings: Option<Tensor<F>>,
    pub conv: Vec<ConvBank<F>>,
    /// `[4d, conv_out_dim + d]`, gate blocks ordered input, forget, output, candidate.
    pub lstm: Linear<F>,
    pub tag_head: Option<Linear<F>>,
    /// Attention vector α of length d.
    pub attention: Option<Tensor<F>>,
    pub intent_head: Option<Linear<F>>,
}

/// Role of a parameter tensor, used to pick its initializer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Name, shape and kind of every parameter tensor for `config`, in the
/// canonical order used by checkpoints and optimizers.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, ParamKind)> {
    use ParamKind::*;
    let d = config.hidden_dim;
    let mut out = vec![(
        "word_embeddings".to_string(),
        vec![config.vocab_size, config.word_embed_dim],
        Weight,
    )];
    if config.mode.has_tag_head() {
        out.push((
            "tag_embeddings".into(),
            vec![config.num_tags + 1, config.tag_embed_dim],
            Weight,
        ));
    }
    for &w in &config.window_sizes {
        out.push((
            format!("conv.{w}.weight"),
            vec![config.filters_per_window, config.window_input_dim(w)],
            Weight,
        ));
        out.push((format!("conv.{w}.bias"), vec![config.filters_per_window], Bias));
    }
    out.push((
        "lstm.weight".into(),
        vec![4 * d, config.conv_out_dim() + d],
        Weight,
    ));
    out.push(("lstm.bias".into(), vec![4 * d], Bias));
    if config.mode.has_tag_head() {
        out.push(("tag_head.weight".into(), vec![config.num_tags, d], Weight));
        out.push(("tag_head.bias".into(), vec![config.num_tags], Bias));
    }
    if config.uses_attention() {
        out.push(("attention".into(), vec![d], Weight));
    }
    if config.mode.has_intent_head() {
        out.push(("intent_head.weight".into(), vec![config.num_intents, d], Weight));
        out.push(("intent_head.bias".into(), vec![config.num_intents], Bias));
    }
    out
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let tensors = param_layout(config)
            .into_iter()
            .map(|(_, shape, _)| Tensor::zeros(shape))
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Builds parameters from tensors in [`param_layout`] order, checking
    /// every shape.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<F>>) -> Result<Self> {
        let layout = param_layout(config);
        if layout.len() != tensors.len() {
            return Err(Error::Dimension(format!(
                "{} tensors supplied, configuration needs {}",
                tensors.len(),
                layout.len()
            )));
        }
        for ((name, shape, _), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let mut it = tensors.into_iter().map(|t| t.with_grad());
        let mut next = || it.next().expect("length checked");
        let word_embeddings = next();
        let tag_embeddings = config.mode.has_tag_head().then(&mut next);
        let conv = config
            .window_sizes
            .iter()
            .map(|&window| ConvBank {
                window,
                linear: Linear {
                    weight: next(),
                    bias: next(),
                },
            })
            .collect();
        let lstm = Linear {
            weight: next(),
            bias: next(),
        };
        let tag_head = config.mode.has_tag_head().then(|| Linear {
            weight: next(),
            bias: next(),
        });
        let attention = config.uses_attention().then(&mut next);
        let intent_head = config.mode.has_intent_head().then(|| Linear {
            weight: next(),
            bias: next(),
        });
        Ok(ModelParams {
            word_embeddings,
            tag_embeddings,
            conv,
            lstm,
            tag_head,
            attention,
            intent_head,
        })
    }

    /// Tensors in [`param_layout`] order.
    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut out = vec![&self.word_embeddings];
        out.extend(self.tag_embeddings.as_ref());
        for bank in &self.conv {
            out.push(&bank.linear.weight);
            out.push(&bank.linear.bias);
        }
        out.push(&self.lstm.weight);
        out.push(&self.lstm.bias);
        if let Some(h) = &self.tag_head {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out.extend(self.attention.as_ref());
        if let Some(h) = &self.intent_head {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = vec![&mut self.word_embeddings];
        out.extend(self.tag_embeddings.as_mut());
        for bank in &mut self.conv {
            out.push(&mut bank.linear.weight);
            out.push(&mut bank.linear.bias);
        }
        out.push(&mut self.lstm.weight);
        out.push(&mut self.lstm.bias);
        if let Some(h) = &mut self.tag_head {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out.extend(self.attention.as_mut());
        if let Some(h) = &mut self.intent_head {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn names(config: &ModelConfig) -> Vec<String> {
        param_layout(config).into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn cast<G: Real>(&self, config: &ModelConfig) -> ModelParams<G> {
        let tensors = self.tensors().into_iter().map(|t| t.cast()).collect();
        ModelParams::from_tensors(config, tensors).expect("same layout")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregator, Mode, SparsityConfig};

    fn cfg(mode: Mode, aggregator: Aggregator) -> ModelConfig {
        ModelConfig {
            mode,
            aggregator,
            word_embed_dim: 4,
            tag_embed_dim: 3,
            hidden_dim: 5,
            window_sizes: vec![1, 3],
            filters_per_window: 2,
            vocab_size: 10,
            num_tags: 6,
            num_intents: 3,
            sparsity: (aggregator == Aggregator::Attention).then(SparsityConfig::default),
            ..Default::default()
        }
        .resolved()
        .unwrap()
    }

    #[test]
    fn layout_matches_mode() {
        let joint = param_layout(&cfg(Mode::Joint, Aggregator::Attention));
        let names: Vec<_> = joint.iter().map(|(n, _, _)| n.as_str()).collect();
        assert_eq!(
            names,
            [
                "word_embeddings",
                "tag_embeddings",
                "conv.1.weight",
                "conv.1.bias",
                "conv.3.weight",
                "conv.3.bias",
                "lstm.weight",
                "lstm.bias",
                "tag_head.weight",
                "tag_head.bias",
                "attention",
                "intent_head.weight",
                "intent_head.bias"
            ]
        );
        assert_eq!(joint[1].1, vec![7, 3]);
        assert_eq!(joint[4].1, vec![2, 3 * 4 + 3]);
        assert_eq!(joint[6].1, vec![20, 4 + 5]);

        let latent = param_layout(&cfg(Mode::Latent, Aggregator::Max));
        assert!(latent.iter().all(|(n, _, _)| !n.starts_with("tag")));
        assert_eq!(latent[3].1, vec![2, 3 * 4 + 5]);

        let tagger = param_layout(&cfg(Mode::Tagger, Aggregator::Max));
        assert!(tagger.iter().all(|(n, _, _)| !n.starts_with("intent")));
    }

    #[test]
    fn from_tensors_rejects_wrong_shape() {
        let c = cfg(Mode::Joint, Aggregator::Max);
        let mut tensors: Vec<Tensor<f32>> = param_layout(&c)
            .into_iter()
            .map(|(_, s, _)| Tensor::zeros(s))
            .collect();
        tensors[2] = Tensor::zeros(vec![1, 1]);
        let err = ModelParams::from_tensors(&c, tensors).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { ref name, .. } if name == "conv.1.weight"));
    }

    #[test]
    fn tensors_round_trip_order() {
        let c = cfg(Mode::Joint, Aggregator::Attention);
        let p = ModelParams::<f64>::zeros(&c).unwrap();
        let q = ModelParams::from_tensors(&c, p.tensors().into_iter().cloned().collect()).unwrap();
        assert_eq!(p, q);
        assert!(p.tensors().iter().all(|t| t.requires_grad()));
    }
}
