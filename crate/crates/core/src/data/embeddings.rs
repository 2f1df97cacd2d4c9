use std::path::Path;

use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Pre-trained vectors for the vocabulary words found in an embedding file.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingOverlay {
    pub dim: usize,
    /// `(word index, vector)` for every in-vocabulary word in the file.
    pub rows: Vec<(usize, Vec<f32>)>,
}

impl EmbeddingOverlay {
    pub fn coverage(&self) -> usize {
        self.rows.len()
    }
}

/// Parses `word v1 … vD` lines. Every line must have the same `D`.
pub fn parse_embeddings(text: &str, vocab: &Vocab) -> Result<EmbeddingOverlay> {
    let mut dim: Option<usize> = None;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f32>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: format!("`{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Data(format!(
                    "line {}: expected {d} values, found {}",
                    idx + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        if vocab.contains_word(word) {
            rows.push((vocab.word_index(word), values));
        }
    }
    Ok(EmbeddingOverlay {
        dim: dim.unwrap_or(0),
        rows,
    })
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocab) -> Result<EmbeddingOverlay> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn vocab() -> Vocab {
        let ex = Example::new(vec!["denver".into(), "to".into()], None, None);
        Vocab::build(&[ex], 1).unwrap()
    }

    #[test]
    fn covers_known_words_only() {
        let o = parse_embeddings("paris 1 2 3\ndenver 0.5 -1 2\n", &vocab()).unwrap();
        assert_eq!(o.dim, 3);
        assert_eq!(o.coverage(), 1);
        assert_eq!(o.rows[0].1, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn no_coverage() {
        let o = parse_embeddings("paris 1 2\n", &vocab()).unwrap();
        assert_eq!(o.coverage(), 0);
    }

    #[test]
    fn ragged_dims_rejected() {
        assert!(matches!(
            parse_embeddings("a 1 2\nb 1 2 3\n", &vocab()),
            Err(Error::Data(_))
        ));
    }
}
