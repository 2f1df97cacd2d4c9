use super::attention::AttentionTrace;
use super::metrics::{intent_metrics, slot_f1, EvalReport};
use crate::data::{batch_examples, Example, Vocab};
use crate::error::{Error, Result};
use crate::model::JointModel;

const INFERENCE_BATCH: usize = 64;

/// Model output for one sentence, with labels resolved to strings.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedExample {
    pub tokens: Vec<String>,
    pub tags: Option<Vec<String>>,
    pub intent: Option<String>,
    pub attention: Option<Vec<f32>>,
}

impl PredictedExample {
    pub fn to_example(&self) -> Example {
        Example::new(self.tokens.clone(), self.tags.clone(), self.intent.clone())
    }
}

/// Greedy predictions in corpus order. Gold labels are ignored.
pub fn predict_corpus(model: &JointModel<f32>, vocab: &Vocab, corpus: &[Example]) -> Result<Vec<PredictedExample>> {
    let mut out = Vec::with_capacity(corpus.len());
    for chunk in corpus.chunks(INFERENCE_BATCH) {
        let bare: Vec<Example> = chunk.iter().map(Example::unlabeled).collect();
        let refs: Vec<&Example> = bare.iter().collect();
        let batch = batch_examples(&refs, vocab)?;
        for (ex, p) in chunk.iter().zip(model.predict_batch(&batch)?) {
            out.push(PredictedExample {
                tokens: ex.tokens.clone(),
                tags: p
                    .tags
                    .map(|t| t.into_iter().map(|i| vocab.tag(i).to_string()).collect()),
                intent: p.intent.map(|i| vocab.intent(i).to_string()),
                attention: p.attention,
            });
        }
    }
    Ok(out)
}

/// Scores whichever outputs the model has against the gold labels present in
/// `corpus`.
pub fn evaluate(model: &JointModel<f32>, vocab: &Vocab, corpus: &[Example]) -> Result<EvalReport> {
    let preds = predict_corpus(model, vocab, corpus)?;
    let mode = model.config.mode;
    let slot = match corpus.iter().map(|e| e.tags.as_ref()).collect::<Option<Vec<_>>>() {
        Some(gold) if mode.has_tag_head() && !corpus.is_empty() => {
            let predicted: Vec<&Vec<String>> =
                preds.iter().map(|p| p.tags.as_ref().expect("tag head")).collect();
            Some(slot_f1(&gold, &predicted)?)
        }
        _ => None,
    };
    let intent = match corpus.iter().map(|e| e.intent.as_deref()).collect::<Option<Vec<_>>>() {
        Some(gold) if mode.has_intent_head() && !corpus.is_empty() => {
            let predicted: Vec<&str> =
                preds.iter().map(|p| p.intent.as_deref().expect("intent head")).collect();
            Some(intent_metrics(&gold, &predicted)?)
        }
        _ => None,
    };
    Ok(EvalReport {
        sentences: corpus.len(),
        slot,
        intent,
    })
}

pub fn attention_traces(model: &JointModel<f32>, vocab: &Vocab, corpus: &[Example]) -> Result<Vec<AttentionTrace>> {
    if !model.config.uses_attention() {
        return Err(Error::Unsupported(format!(
            "attention export needs the attention aggregator (model uses {:?} in {} mode)",
            model.config.aggregator,
            model.config.mode.name()
        )));
    }
    Ok(predict_corpus(model, vocab, corpus)?
        .into_iter()
        .zip(corpus)
        .map(|(p, ex)| AttentionTrace {
            tokens: p.tokens,
            weights: p.attention.expect("attention model"),
            predicted_intent: p.intent.expect("intent head"),
            gold_intent: ex.intent.clone(),
        })
        .collect())
}
