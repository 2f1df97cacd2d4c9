use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which objectives are trained and what feeds the label channel of the
/// convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Tag sequence and sentence category, previous tags in the window.
    #[default]
    Joint,
    /// Sentence category only; previous hidden states stand in for tags.
    Latent,
    /// Tag sequence only.
    Tagger,
    /// Sentence category only, no label channel in the window.
    Classifier,
}

impl Mode {
    pub fn has_tag_head(self) -> bool {
        matches!(self, Mode::Joint | Mode::Tagger)
    }

    pub fn has_intent_head(self) -> bool {
        !matches!(self, Mode::Tagger)
    }

    pub fn needs_tags(self) -> bool {
        self.has_tag_head()
    }

    pub fn needs_intents(self) -> bool {
        self.has_intent_head()
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::Latent => "latent",
            Mode::Tagger => "tagger",
            Mode::Classifier => "classifier",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Mode::Joint),
            "latent" => Ok(Mode::Latent),
            "tagger" | "tagger-only" => Ok(Mode::Tagger),
            "classifier" | "classifier-only" => Ok(Mode::Classifier),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// How the hidden states of a sentence are summarized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Max,
    Avg,
    Attention,
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "max-pool" => Ok(Aggregator::Max),
            "avg" | "avg-pool" | "mean" => Ok(Aggregator::Avg),
            "attention" => Ok(Aggregator::Attention),
            other => Err(Error::Config(format!("unknown aggregator `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparsityConfig {
    /// Target mean attention per time position.
    pub rho: f64,
    /// Weight of the KL penalty in the total loss.
    pub beta: f64,
    /// Batch means are clamped into `(epsilon, 1 − epsilon)`.
    pub epsilon: f64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        SparsityConfig {
            rho: 0.05,
            beta: 0.1,
            epsilon: 1e-6,
        }
    }
}

impl SparsityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho = {} must lie in (0, 1)", self.rho)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta = {} must be >= 0", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!(
                "epsilon = {} must lie in (0, 0.5)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mode: Mode,
    pub word_embed_dim: usize,
    pub tag_embed_dim: usize,
    pub hidden_dim: usize,
    /// Odd window widths `2k + 1`; one filter bank per width.
    pub window_sizes: Vec<usize>,
    pub filters_per_window: usize,
    pub aggregator: Aggregator,
    pub sparsity: Option<SparsityConfig>,
    /// Inverted dropout on the convolution features while training.
    pub dropout_rate: f64,
    /// Filled from the vocabulary when training starts.
    pub vocab_size: usize,
    pub num_tags: usize,
    pub num_intents: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::Joint,
            word_embed_dim: 100,
            tag_embed_dim: 30,
            hidden_dim: 100,
            window_sizes: vec![3, 5, 7],
            filters_per_window: 100,
            aggregator: Aggregator::Max,
            sparsity: None,
            dropout_rate: 0.5,
            vocab_size: 0,
            num_tags: 0,
            num_intents: 0,
        }
    }
}

impl ModelConfig {
    /// Applies forced settings (latent mode ties the label channel to the
    /// hidden size) and checks every invariant.
    pub fn resolved(mut self) -> Result<Self> {
        if self.mode == Mode::Latent {
            self.tag_embed_dim = self.hidden_dim;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("word_embed_dim", self.word_embed_dim),
            ("tag_embed_dim", self.tag_embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("filters_per_window", self.filters_per_window),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.window_sizes.is_empty() {
            return Err(Error::Config("at least one window size is required".into()));
        }
        if let Some(&w) = self.window_sizes.iter().find(|&&w| w == 0 || w % 2 == 0) {
            return Err(Error::Config(format!("window size {w} is not odd and positive")));
        }
        if self.mode == Mode::Latent && self.tag_embed_dim != self.hidden_dim {
            return Err(Error::Config(
                "latent mode requires tag_embed_dim == hidden_dim".into(),
            ));
        }
        if let Some(s) = &self.sparsity {
            s.validate()?;
            if self.aggregator != Aggregator::Attention {
                return Err(Error::Config(
                    "a sparsity penalty requires the attention aggregator".into(),
                ));
            }
            if !self.mode.has_intent_head() {
                return Err(Error::Config(
                    "a sparsity penalty needs a sentence-level objective".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate = {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Width of the label channel per previous position (0 when absent).
    pub fn label_channel_dim(&self) -> usize {
        match self.mode {
            Mode::Joint | Mode::Tagger => self.tag_embed_dim,
            Mode::Latent => self.hidden_dim,
            Mode::Classifier => 0,
        }
    }

    /// `(2k + 1)·word_embed_dim + k·label_channel_dim` for window `2k + 1`.
    pub fn window_input_dim(&self, window: usize) -> usize {
        let k = window / 2;
        window * self.word_embed_dim + k * self.label_channel_dim()
    }

    pub fn conv_out_dim(&self) -> usize {
        self.filters_per_window * self.window_sizes.len()
    }

    pub fn uses_attention(&self) -> bool {
        self.mode.has_intent_head() && self.aggregator == Aggregator::Attention
    }

    /// Penalty weight, zero unless the penalty is active.
    pub fn beta(&self) -> f64 {
        match (&self.sparsity, self.uses_attention()) {
            (Some(s), true) => s.beta,
            _ => 0.0,
        }
    }
}
