use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::corpus::Example;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word, tag and intent index maps. Immutable once built.
///
/// The begin-of-sentence tag is not a real label; it takes index
/// `num_tags()` in the tag embedding table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "VocabLists", into = "VocabLists")]
pub struct Vocab {
    words: Vec<String>,
    tags: Vec<String>,
    intents: Vec<String>,
    word_ix: HashMap<String, usize>,
    tag_ix: HashMap<String, usize>,
    intent_ix: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabLists {
    words: Vec<String>,
    tags: Vec<String>,
    intents: Vec<String>,
}

impl From<VocabLists> for Vocab {
    fn from(l: VocabLists) -> Self {
        Vocab::from_lists(l.words, l.tags, l.intents)
    }
}

impl From<Vocab> for VocabLists {
    fn from(v: Vocab) -> Self {
        VocabLists {
            words: v.words,
            tags: v.tags,
            intents: v.intents,
        }
    }
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.tags == other.tags && self.intents == other.intents
    }
}

fn index(list: &[String]) -> HashMap<String, usize> {
    list.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

/// Orders keys by count (descending), then lexicographically.
fn ranked<'a>(counts: HashMap<&'a str, usize>, min_count: usize) -> Vec<String> {
    let mut v: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().map(|(s, _)| s.to_string()).collect()
}

impl Vocab {
    /// `words` must start with the PAD and UNK entries.
    pub fn from_lists(words: Vec<String>, tags: Vec<String>, intents: Vec<String>) -> Self {
        Vocab {
            word_ix: index(&words),
            tag_ix: index(&tags),
            intent_ix: index(&intents),
            words,
            tags,
            intents,
        }
    }

    pub fn build(corpus: &[Example], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut words: HashMap<&str, usize> = HashMap::new();
        let mut tags: HashMap<&str, usize> = HashMap::new();
        let mut intents: HashMap<&str, usize> = HashMap::new();
        for ex in corpus {
            for t in &ex.tokens {
                if t != PAD_TOKEN && t != UNK_TOKEN {
                    *words.entry(t).or_default() += 1;
                }
            }
            for t in ex.tags.iter().flatten() {
                *tags.entry(t).or_default() += 1;
            }
            if let Some(i) = &ex.intent {
                *intents.entry(i).or_default() += 1;
            }
        }
        let mut word_list = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        word_list.extend(ranked(words, min_count.max(1)));
        Ok(Vocab::from_lists(word_list, ranked(tags, 1), ranked(intents, 1)))
    }

    pub fn word_index(&self, w: &str) -> usize {
        self.word_ix.get(w).copied().unwrap_or(UNK)
    }

    pub fn contains_word(&self, w: &str) -> bool {
        self.word_ix.contains_key(w)
    }

    pub fn tag_index(&self, t: &str) -> Option<usize> {
        self.tag_ix.get(t).copied()
    }

    pub fn intent_index(&self, i: &str) -> Option<usize> {
        self.intent_ix.get(i).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn tag(&self, i: usize) -> &str {
        &self.tags[i]
    }

    pub fn intent(&self, i: usize) -> &str {
        &self.intents[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn num_intents(&self) -> usize {
        self.intents.len()
    }

    pub fn bos_tag(&self) -> usize {
        self.tags.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Example> {
        lines
            .iter()
            .map(|l| Example::new(l.split(' ').map(String::from).collect(), None, None))
            .collect()
    }

    #[test]
    fn min_count_one() {
        let v = Vocab::build(&corpus(&["a b", "a"]), 1).unwrap();
        assert_eq!(v.words(), ["<pad>", "<unk>", "a", "b"]);
    }

    #[test]
    fn min_count_two_maps_rare_to_unk() {
        let v = Vocab::build(&corpus(&["a b", "a"]), 2).unwrap();
        assert_eq!(v.word_index("b"), UNK);
        assert_eq!(v.word_index("a"), 2);
        assert_eq!(v.word_index("never-seen"), UNK);
    }

    #[test]
    fn deterministic_and_serializable() {
        let c = corpus(&["z y x", "y x", "x"]);
        let a = Vocab::build(&c, 1).unwrap();
        let b = Vocab::build(&c, 1).unwrap();
        assert_eq!(a.words(), b.words());
        assert_eq!(&a.words()[2..], ["x", "y", "z"]);
        let json = serde_json::to_string(&a).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.word_index("y"), 3);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Vocab::build(&[], 1).is_err());
    }
}
