//! Seeded ATIS-like corpus generator.
//!
//! Each sentence realizes one template: an opener phrase, then one span per
//! slot type of the template (cue words tagged `O` followed by a value
//! tagged `B-X`/`I-X`), with filler words sprinkled between spans. The
//! intent is fixed by the template, so it is a function of the slot-type set.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Example;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    /// Phrases that may precede a value (space separated, tagged `O`).
    pub cues: Vec<String>,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub intent: String,
    pub slots: Vec<String>,
    pub weight: f64,
    /// Intent-specific openers; the shared ones are used when empty.
    #[serde(default)]
    pub openers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub sentences: usize,
    pub templates: Vec<Template>,
    pub slots: Vec<SlotDef>,
    pub openers: Vec<String>,
    pub fillers: Vec<String>,
    /// Inclusive range of filler words added per sentence.
    pub filler_range: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub examples: Vec<Example>,
    /// `keywords[i][t]` is set when token `t` of sentence `i` belongs to a
    /// slot value.
    pub keywords: Vec<Vec<bool>>,
}

fn phrases(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl SynthSpec {
    /// Four intents over eight slot types, about sixty word types.
    pub fn atis_like(seed: u64, sentences: usize) -> Self {
        let cities = [
            "boston",
            "denver",
            "dallas",
            "atlanta",
            "seattle",
            "chicago",
            "new york",
            "san francisco",
            "los angeles",
            "salt lake city",
        ];
        let days = ["today", "tomorrow", "monday", "tuesday", "wednesday", "friday", "sunday"];
        let slot = |name: &str, cues: &[&str], values: &[&str]| SlotDef {
            name: name.into(),
            cues: phrases(cues),
            values: phrases(values),
        };
        let template = |intent: &str, slots: &[&str], weight: f64| Template {
            intent: intent.into(),
            slots: phrases(slots),
            weight,
            openers: Vec::new(),
        };
        SynthSpec {
            seed,
            sentences,
            templates: vec![
                template("Flight", &["FromCity", "ToCity", "Date"], 0.4),
                template("Return", &["ReturnCity", "ReturnDay", "PeriodOfDay"], 0.2),
                template("Fare", &["FareClass", "FromCity", "ToCity"], 0.2),
                template("Airline", &["Airline", "ToCity", "Date"], 0.2),
            ],
            slots: vec![
                slot("FromCity", &["from", "leaving"], &cities),
                slot("ToCity", &["to", "arriving in"], &cities),
                slot("Date", &["on", "for"], &days),
                slot("ReturnCity", &["back to", "return to"], &cities),
                slot("ReturnDay", &["returning", "coming back"], &days),
                slot("PeriodOfDay", &["in the"], &["morning", "afternoon", "evening", "night"]),
                slot(
                    "FareClass",
                    &["in", "flying"],
                    &["first class", "economy", "business class", "coach"],
                ),
                slot(
                    "Airline",
                    &["with", "on"],
                    &["delta", "united", "american airlines", "jetblue", "southwest"],
                ),
            ],
            openers: phrases(&["i want a flight", "show me flights", "i need a ticket", "find"]),
            fillers: phrases(&["please", "the", "cheap", "trip", "now"]),
            filler_range: (0, 3),
        }
    }

    /// Variant of [`SynthSpec::atis_like`] where some slot labels depend on
    /// the intent: `ToCity`/`ReturnCity` share the cue "to" and
    /// `Date`/`ReturnDay` share "on", and only the intent-specific opener
    /// tells them apart.
    pub fn intent_cued(seed: u64, sentences: usize) -> Self {
        let mut spec = Self::atis_like(seed, sentences);
        let openers: [(&str, &[&str]); 4] = [
            ("Flight", &["i want to fly", "book a flight"]),
            ("Return", &["i need to come home", "book my return"]),
            ("Fare", &["how much is it", "what does it cost"]),
            ("Airline", &["which carrier flies", "who flies"]),
        ];
        for (t, (intent, list)) in spec.templates.iter_mut().zip(openers) {
            debug_assert_eq!(t.intent, intent);
            t.openers = phrases(list);
        }
        for s in &mut spec.slots {
            match s.name.as_str() {
                "ToCity" | "ReturnCity" => s.cues = phrases(&["to"]),
                "Date" | "ReturnDay" => s.cues = phrases(&["on"]),
                _ => {}
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Config("synthetic spec has no templates".into()));
        }
        for t in &self.templates {
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(Error::Config(format!(
                    "template `{}` has weight {}",
                    t.intent, t.weight
                )));
            }
            for s in &t.slots {
                let def = self.slot(s).ok_or_else(|| {
                    Error::Config(format!("template `{}` uses unknown slot `{s}`", t.intent))
                })?;
                if def.values.is_empty() {
                    return Err(Error::Config(format!("slot `{s}` has no values")));
                }
            }
        }
        if self.filler_range.0 > self.filler_range.1 {
            return Err(Error::Config("filler_range is reversed".into()));
        }
        if self.filler_range.1 > 0 && self.fillers.is_empty() {
            return Err(Error::Config("filler words requested but none given".into()));
        }
        Ok(())
    }

    fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Normalized template sampling weights.
    pub fn intent_probabilities(&self) -> Vec<(String, f64)> {
        let total: f64 = self.templates.iter().map(|t| t.weight).sum();
        self.templates
            .iter()
            .map(|t| (t.intent.clone(), t.weight / total))
            .collect()
    }
}

struct Segment {
    tokens: Vec<String>,
    tags: Vec<String>,
    keyword: Vec<bool>,
}

impl Segment {
    fn plain(words: &str) -> Self {
        let tokens: Vec<String> = words.split_whitespace().map(String::from).collect();
        let n = tokens.len();
        Segment {
            tokens,
            tags: vec!["O".into(); n],
            keyword: vec![false; n],
        }
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pick = WeightedIndex::new(spec.templates.iter().map(|t| t.weight))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut examples = Vec::with_capacity(spec.sentences);
    let mut keywords = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let template = &spec.templates[pick.sample(&mut rng)];
        let mut segments = Vec::new();
        let openers = if template.openers.is_empty() { &spec.openers } else { &template.openers };
        if let Some(opener) = openers.choose(&mut rng) {
            segments.push(Segment::plain(opener));
        }
        let mut order: Vec<&String> = template.slots.iter().collect();
        order.shuffle(&mut rng);
        for name in order {
            let def = spec.slot(name).expect("validated");
            let mut seg = match def.cues.choose(&mut rng) {
                Some(cue) => Segment::plain(cue),
                None => Segment::plain(""),
            };
            let value = def.values.choose(&mut rng).expect("validated");
            for (j, w) in value.split_whitespace().enumerate() {
                seg.tokens.push(w.to_string());
                seg.tags.push(format!("{}-{name}", if j == 0 { "B" } else { "I" }));
                seg.keyword.push(true);
            }
            segments.push(seg);
        }
        let extra = rng.gen_range(spec.filler_range.0..=spec.filler_range.1);
        for _ in 0..extra {
            let word = spec.fillers.choose(&mut rng).expect("validated");
            let at = rng.gen_range(0..=segments.len());
            segments.insert(at, Segment::plain(word));
        }
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        let mut kw = Vec::new();
        for s in segments {
            tokens.extend(s.tokens);
            tags.extend(s.tags);
            kw.extend(s.keyword);
        }
        examples.push(Example::new(tokens, Some(tags), Some(template.intent.clone())));
        keywords.push(kw);
    }
    Ok(SynthCorpus { examples, keywords })
}

/// Splits into consecutive train/dev/test parts of the given sizes; the
/// test part takes whatever remains.
pub fn split_counts<T: Clone>(items: &[T], train: usize, dev: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let train = train.min(items.len());
    let dev = dev.min(items.len() - train);
    (
        items[..train].to_vec(),
        items[train..train + dev].to_vec(),
        items[train + dev..].to_vec(),
    )
}

/// 80/10/10 split.
pub fn split_default<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let train = n * 8 / 10;
    let dev = n / 10;
    split_counts(items, train, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::check_bio;
    use std::collections::{BTreeSet, HashMap, HashSet};

    #[test]
    fn deterministic_for_seed() {
        let a = synth_generate(&SynthSpec::atis_like(7, 50)).unwrap();
        let b = synth_generate(&SynthSpec::atis_like(7, 50)).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthSpec::atis_like(8, 50)).unwrap();
        assert_ne!(a.examples, c.examples);
    }

    #[test]
    fn intent_cued_labels_follow_the_intent() {
        let corpus = synth_generate(&SynthSpec::intent_cued(2, 300)).unwrap();
        let mut after_to = HashMap::new();
        for ex in &corpus.examples {
            let tags = ex.tags.as_ref().unwrap();
            check_bio(tags).unwrap();
            for (t, w) in ex.tokens.iter().enumerate().skip(1) {
                if ex.tokens[t - 1] == "to" && tags[t].starts_with("B-") {
                    let intent = ex.intent.clone().unwrap();
                    let slot = tags[t].clone();
                    assert_eq!(after_to.entry(intent).or_insert_with(|| slot.clone()), &slot, "{w}");
                }
            }
        }
        assert_eq!(after_to["Return"], "B-ReturnCity");
        assert_eq!(after_to["Flight"], "B-ToCity");
    }

    #[test]
    fn intent_is_function_of_slot_types() {
        let corpus = synth_generate(&SynthSpec::atis_like(1, 500)).unwrap();
        let mut seen: HashMap<BTreeSet<String>, String> = HashMap::new();
        for ex in &corpus.examples {
            let tags = ex.tags.as_ref().unwrap();
            check_bio(tags).unwrap();
            let types: BTreeSet<String> = tags
                .iter()
                .filter_map(|t| t.strip_prefix("B-").map(String::from))
                .collect();
            let intent = ex.intent.clone().unwrap();
            assert_eq!(seen.entry(types).or_insert_with(|| intent.clone()), &intent);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn vocabulary_size_and_slot_count() {
        let corpus = synth_generate(&SynthSpec::atis_like(3, 1000)).unwrap();
        let words: HashSet<&String> = corpus.examples.iter().flat_map(|e| &e.tokens).collect();
        assert!((50..=70).contains(&words.len()), "{} word types", words.len());
        let types: HashSet<&str> = corpus
            .examples
            .iter()
            .flat_map(|e| e.tags.as_ref().unwrap())
            .filter_map(|t| t.strip_prefix("B-"))
            .collect();
        assert_eq!(types.len(), 8);
        for (ex, kw) in corpus.examples.iter().zip(&corpus.keywords) {
            for (tag, &k) in ex.tags.as_ref().unwrap().iter().zip(kw) {
                assert_eq!(tag != "O", k);
            }
        }
    }

    #[test]
    fn intent_frequencies_follow_weights() {
        let spec = SynthSpec::atis_like(11, 1000);
        let corpus = synth_generate(&spec).unwrap();
        for (intent, p) in spec.intent_probabilities() {
            let count = corpus
                .examples
                .iter()
                .filter(|e| e.intent.as_deref() == Some(intent.as_str()))
                .count() as f64;
            let n = 1000.0;
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((count - n * p).abs() <= 3.0 * sigma, "{intent}: {count}");
        }
    }

    #[test]
    fn bad_specs_rejected() {
        let mut spec = SynthSpec::atis_like(0, 10);
        spec.templates[0].slots.push("Nope".into());
        assert!(synth_generate(&spec).is_err());
        spec.templates.clear();
        assert!(synth_generate(&spec).is_err());
    }

    #[test]
    fn split_sizes() {
        let v: Vec<u32> = (0..1200).collect();
        let (a, b, c) = split_counts(&v, 1000, 0);
        assert_eq!((a.len(), b.len(), c.len()), (1000, 0, 200));
        let (a, b, c) = split_default(&v);
        assert_eq!((a.len(), b.len(), c.len()), (960, 120, 120));
    }
}
