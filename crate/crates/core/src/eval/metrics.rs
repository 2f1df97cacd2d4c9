use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::spans::{extract_spans, Span};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_spans: usize,
    pub predicted_spans: usize,
    pub matched: usize,
    /// Illegal `I-` tags repaired while reading the predictions.
    pub repaired: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Exact-match span precision, recall and F1 over a corpus.
pub fn slot_f1<G, P, S, T>(gold: &[G], predicted: &[P]) -> Result<SlotScores>
where
    G: AsRef<[S]>,
    P: AsRef<[T]>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    if gold.len() != predicted.len() {
        return Err(Error::Eval(format!(
            "{} gold sentences, {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let (mut n_gold, mut n_pred, mut matched, mut repaired) = (0, 0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g.len() != p.len() {
            return Err(Error::Eval(format!(
                "sentence {i}: {} gold tags, {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs = extract_spans(g);
        let ps = extract_spans(p);
        repaired += ps.repaired;
        n_gold += gs.spans.len();
        n_pred += ps.spans.len();
        let gold_set: HashSet<&Span> = gs.spans.iter().collect();
        matched += ps.spans.iter().filter(|s| gold_set.contains(s)).count();
    }
    let precision = ratio(matched, n_pred);
    let recall = ratio(matched, n_gold);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SlotScores {
        precision,
        recall,
        f1,
        gold_spans: n_gold,
        predicted_spans: n_pred,
        matched,
        repaired,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentScores {
    pub accuracy: f64,
    pub error_rate: f64,
    pub total: usize,
    pub correct: usize,
    /// Row and column labels of `confusion`, sorted.
    pub labels: Vec<String>,
    /// `confusion[g][p]` counts gold `labels[g]` predicted as `labels[p]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn intent_metrics<S: AsRef<str>, T: AsRef<str>>(gold: &[S], predicted: &[T]) -> Result<IntentScores> {
    if gold.len() != predicted.len() {
        return Err(Error::Eval(format!(
            "{} gold intents, {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let labels: Vec<String> = gold
        .iter()
        .map(|s| s.as_ref())
        .chain(predicted.iter().map(|s| s.as_ref()))
        .collect::<BTreeSet<&str>>()
        .into_iter()
        .map(String::from)
        .collect();
    let pos = |s: &str| labels.binary_search_by(|l| l.as_str().cmp(s)).expect("collected");
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut correct = 0;
    for (g, p) in gold.iter().zip(predicted) {
        let (g, p) = (g.as_ref(), p.as_ref());
        confusion[pos(g)][pos(p)] += 1;
        correct += (g == p) as usize;
    }
    let accuracy = ratio(correct, gold.len());
    Ok(IntentScores {
        accuracy,
        error_rate: 1.0 - accuracy,
        total: gold.len(),
        correct,
        labels,
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub slot: Option<SlotScores>,
    pub intent: Option<IntentScores>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Percentages: slot F1 and intent error rate.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut out = String::new();
        let _ = writeln!(out, "{:<12}{:>8}{:>8}", "Model", "Slot", "Intent");
        let _ = writeln!(
            out,
            "{:<12}{:>8}{:>8}",
            "this run",
            cell(self.slot.as_ref().map(|s| s.f1)),
            cell(self.intent.as_ref().map(|i| i.error_rate))
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![tags("O B-A I-A O B-B")];
        let s = slot_f1(&g, &g).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn boundary_error_halves_scores() {
        let g = vec![tags("O O O O O B-FromCity O B-ToCity")];
        let p = vec![tags("O O O O O B-FromCity B-ToCity I-ToCity")];
        let s = slot_f1(&g, &p).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let g = vec![tags("B-A O")];
        let p = vec![tags("O O")];
        let s = slot_f1(&g, &p).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn length_mismatch_names_sentence() {
        let g = vec![tags("O"), tags("O O")];
        let p = vec![tags("O"), tags("O")];
        let err = slot_f1(&g, &p).unwrap_err().to_string();
        assert!(err.contains("sentence 1"), "{err}");
    }

    #[test]
    fn intent_rates_and_confusion() {
        let g = ["a", "a", "b", "c"];
        assert_eq!(intent_metrics(&g, &g).unwrap().error_rate, 0.0);
        let p = ["a", "b", "b", "c"];
        let m = intent_metrics(&g, &p).unwrap();
        assert_eq!(m.error_rate, 0.25);
        assert_eq!(m.labels, ["a", "b", "c"]);
        let row_sums: Vec<usize> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![2, 1, 1]);
    }

    #[test]
    fn table_has_columns() {
        let r = EvalReport {
            sentences: 1,
            slot: None,
            intent: Some(intent_metrics(&["a"], &["a"]).unwrap()),
        };
        let t = r.table();
        assert!(t.contains("Slot") && t.contains("Intent") && t.contains("0.00"));
    }
}
