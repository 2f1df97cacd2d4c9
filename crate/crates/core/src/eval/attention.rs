use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token attention weights `ψ(h_t·α)` of one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub tokens: Vec<String>,
    pub weights: Vec<f32>,
    pub predicted_intent: String,
    pub gold_intent: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionFormat {
    #[default]
    Json,
    Ansi,
}

impl std::str::FromStr for AttentionFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(AttentionFormat::Json),
            "ansi" => Ok(AttentionFormat::Ansi),
            other => Err(Error::Config(format!("unknown attention format `{other}`"))),
        }
    }
}

/// Display intensity per token: weights min–max scaled within the sentence,
/// 0.5 everywhere when all weights are equal.
pub fn shade_levels(weights: &[f32]) -> Vec<f64> {
    let lo = weights.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = weights.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    weights
        .iter()
        .map(|&w| if hi > lo { (w as f64 - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

fn render_ansi(trace: &AttentionTrace, out: &mut String) {
    for (tok, s) in trace.tokens.iter().zip(shade_levels(&trace.weights)) {
        // white to dark blue; darker means more attention
        let r = (255.0 * (1.0 - s)).round() as u8;
        let b = (255.0 - 116.0 * s).round() as u8;
        let fg = if s > 0.5 { 255 } else { 0 };
        let _ = write!(out, "\x1b[48;2;{r};{r};{b}m\x1b[38;2;{fg};{fg};{fg}m {tok} \x1b[0m");
    }
    let _ = write!(out, "  => {}", trace.predicted_intent);
    if let Some(g) = &trace.gold_intent {
        let _ = write!(out, " (gold {g})");
    }
    out.push('\n');
}

pub fn export_attention(traces: &[AttentionTrace], format: AttentionFormat) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        if t.tokens.len() != t.weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} tokens with {} weights",
                t.tokens.len(),
                t.weights.len()
            )));
        }
        match format {
            AttentionFormat::Json => {
                out.push_str(&serde_json::to_string(t)?);
                out.push('\n');
            }
            AttentionFormat::Ansi => render_ansi(t, &mut out),
        }
    }
    Ok(out)
}

pub fn parse_attention_json(text: &str) -> Result<Vec<AttentionTrace>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(weights: Vec<f32>) -> AttentionTrace {
        AttentionTrace {
            tokens: (0..weights.len()).map(|i| format!("w{i}")).collect(),
            weights,
            predicted_intent: "Flight".into(),
            gold_intent: Some("Flight".into()),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let traces = vec![trace(vec![0.123_456_79, 0.9, 1e-7]), trace(vec![0.5])];
        let text = export_attention(&traces, AttentionFormat::Json).unwrap();
        assert_eq!(parse_attention_json(&text).unwrap(), traces);
        assert!(text.contains("\"predicted_intent\":\"Flight\""));
    }

    #[test]
    fn uniform_weights_shade_uniformly() {
        assert_eq!(shade_levels(&[0.3, 0.3, 0.3]), vec![0.5; 3]);
    }

    #[test]
    fn heavier_token_is_darker() {
        let t = AttentionTrace {
            tokens: vec!["currency".into(), "the".into()],
            weights: vec![0.9, 0.1],
            predicted_intent: "DESC".into(),
            gold_intent: None,
        };
        assert_eq!(shade_levels(&t.weights), vec![1.0, 0.0]);
        let ansi = export_attention(&[t], AttentionFormat::Ansi).unwrap();
        assert!(ansi.contains("\x1b[48;2;0;0;139m\x1b[38;2;255;255;255m currency "));
        assert!(ansi.contains("\x1b[48;2;255;255;255m\x1b[38;2;0;0;0m the "));
    }
}
