//! Span F1, intent error and attention export.

mod attention;
mod inference;
mod metrics;
mod spans;

pub use attention::{export_attention, parse_attention_json, shade_levels, AttentionFormat, AttentionTrace};
pub use inference::{attention_traces, evaluate, predict_corpus, PredictedExample};
pub use metrics::{intent_metrics, slot_f1, EvalReport, IntentScores, SlotScores};
pub use spans::{extract_spans, spans_to_bio, Span, SpanSet};
