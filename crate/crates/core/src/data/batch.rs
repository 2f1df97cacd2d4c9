use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Example;
use super::vocab::{Vocab, PAD};
use crate::error::{Error, Result};

/// Padded minibatch. Every matrix is `m × L` with `L` the longest sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub words: Vec<Vec<usize>>,
    /// Tag indices; pad cells hold 0 and are never read.
    pub tags: Option<Vec<Vec<usize>>>,
    pub intents: Option<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl Batch {
    /// Builds a batch from already-indexed sentences.
    pub fn from_indices(
        words: Vec<Vec<usize>>,
        tags: Option<Vec<Vec<usize>>>,
        intents: Option<Vec<usize>>,
    ) -> Result<Self> {
        let lengths: Vec<usize> = words.iter().map(Vec::len).collect();
        if let Some(tags) = &tags {
            if tags.len() != words.len() {
                return Err(Error::Data(format!(
                    "{} tag rows for {} sentences",
                    tags.len(),
                    words.len()
                )));
            }
            for (i, (t, &n)) in tags.iter().zip(&lengths).enumerate() {
                if t.len() != n {
                    return Err(Error::Data(format!(
                        "sentence {i} has {n} tokens but {} tags",
                        t.len()
                    )));
                }
            }
        }
        if let Some(intents) = &intents {
            if intents.len() != words.len() {
                return Err(Error::Data(format!(
                    "{} intents for {} sentences",
                    intents.len(),
                    words.len()
                )));
            }
        }
        let width = lengths.iter().copied().max().unwrap_or(0);
        let pad_row = |row: Vec<usize>| {
            let mut row = row;
            row.resize(width, PAD);
            row
        };
        let mask = lengths
            .iter()
            .map(|&n| (0..width).map(|j| j < n).collect())
            .collect();
        Ok(Batch {
            words: words.into_iter().map(pad_row).collect(),
            tags: tags.map(|t| t.into_iter().map(pad_row).collect()),
            intents,
            mask,
            lengths,
        })
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn width(&self) -> usize {
        self.words.first().map_or(0, Vec::len)
    }

    /// Sentence lengths as given by the mask, which must be a prefix of
    /// true cells in every row.
    pub fn valid_lengths(&self) -> Result<Vec<usize>> {
        self.mask
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n = row.iter().take_while(|&&v| v).count();
                if row[n..].iter().any(|&v| v) {
                    return Err(Error::InvalidInput(format!(
                        "mask of sentence {i} is not contiguous"
                    )));
                }
                if self.words[i].len() != row.len() {
                    return Err(Error::InvalidInput(format!(
                        "sentence {i}: {} word cells, {} mask cells",
                        self.words[i].len(),
                        row.len()
                    )));
                }
                Ok(n)
            })
            .collect()
    }

    /// Same batch with `extra` more pad columns.
    pub fn with_extra_padding(&self, extra: usize) -> Batch {
        let widen = |rows: &Vec<Vec<usize>>| {
            rows.iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.extend(std::iter::repeat(PAD).take(extra));
                    r
                })
                .collect()
        };
        Batch {
            words: widen(&self.words),
            tags: self.tags.as_ref().map(widen),
            intents: self.intents.clone(),
            mask: self
                .mask
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.extend(std::iter::repeat(false).take(extra));
                    r
                })
                .collect(),
            lengths: self.lengths.clone(),
        }
    }
}

/// Indexes one example. Unknown words map to UNK; unknown labels are a
/// data error.
pub fn encode_example(
    ex: &Example,
    vocab: &Vocab,
) -> Result<(Vec<usize>, Option<Vec<usize>>, Option<usize>)> {
    let words = ex.tokens.iter().map(|t| vocab.word_index(t)).collect();
    let tags = ex
        .tags
        .as_ref()
        .map(|tags| {
            tags.iter()
                .map(|t| {
                    vocab
                        .tag_index(t)
                        .ok_or_else(|| Error::Data(format!("tag `{t}` is not in the vocabulary")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let intent = ex
        .intent
        .as_ref()
        .map(|i| {
            vocab
                .intent_index(i)
                .ok_or_else(|| Error::Data(format!("intent `{i}` is not in the vocabulary")))
        })
        .transpose()?;
    Ok((words, tags, intent))
}

/// Builds a single batch from `examples`. Tags (intents) are kept only when
/// every example has them.
pub fn batch_examples(examples: &[&Example], vocab: &Vocab) -> Result<Batch> {
    let mut words = Vec::with_capacity(examples.len());
    let mut tags = Vec::with_capacity(examples.len());
    let mut intents = Vec::with_capacity(examples.len());
    for ex in examples {
        let (w, t, i) = encode_example(ex, vocab)?;
        words.push(w);
        tags.push(t);
        intents.push(i);
    }
    let tags = tags.into_iter().collect::<Option<Vec<_>>>();
    let intents = intents.into_iter().collect::<Option<Vec<_>>>();
    Batch::from_indices(words, tags, intents)
}

/// Splits the corpus into batches of `m` (the last may be smaller), after a
/// seeded shuffle when `shuffle` is set.
pub fn make_batches(
    corpus: &[Example],
    vocab: &Vocab,
    m: usize,
    shuffle: bool,
    seed: u64,
) -> Result<Vec<Batch>> {
    if m == 0 {
        return Err(Error::Config("minibatch size must be positive".into()));
    }
    let order = batch_order(corpus.len(), shuffle, seed);
    order
        .chunks(m)
        .map(|chunk| {
            let refs: Vec<&Example> = chunk.iter().map(|&i| &corpus[i]).collect();
            batch_examples(&refs, vocab)
        })
        .collect()
}

/// Example order used by [`make_batches`].
pub fn batch_order(n: usize, shuffle: bool, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(tokens: &str) -> Example {
        Example::new(tokens.split(' ').map(String::from).collect(), None, None)
    }

    #[test]
    fn pads_to_longest() {
        let corpus = vec![ex("a b c"), ex("a b c d e")];
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let b = &make_batches(&corpus, &vocab, 2, false, 0).unwrap()[0];
        assert_eq!(b.width(), 5);
        assert_eq!(b.words[0][3..], [PAD, PAD]);
        assert_eq!(b.mask[0], vec![true, true, true, false, false]);
        assert_eq!(b.mask.iter().flatten().filter(|&&v| !v).count(), 2);
        assert_eq!(b.valid_lengths().unwrap(), vec![3, 5]);
    }

    #[test]
    fn partition_sizes() {
        let corpus: Vec<_> = (0..50).map(|_| ex("x")).collect();
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let sizes: Vec<_> = make_batches(&corpus, &vocab, 16, true, 3)
            .unwrap()
            .iter()
            .map(Batch::size)
            .collect();
        assert_eq!(sizes, vec![16, 16, 16, 2]);
    }

    #[test]
    fn order_and_determinism() {
        assert_eq!(batch_order(5, false, 9), vec![0, 1, 2, 3, 4]);
        assert_eq!(batch_order(40, true, 9), batch_order(40, true, 9));
        assert_ne!(batch_order(40, true, 9), batch_order(40, true, 10));
    }

    #[test]
    fn extra_padding_keeps_lengths() {
        let corpus = vec![ex("a b"), ex("a")];
        let vocab = Vocab::build(&corpus, 1).unwrap();
        let b = &make_batches(&corpus, &vocab, 2, false, 0).unwrap()[0];
        let wide = b.with_extra_padding(3);
        assert_eq!(wide.width(), 5);
        assert_eq!(wide.valid_lengths().unwrap(), vec![2, 1]);
    }
}
