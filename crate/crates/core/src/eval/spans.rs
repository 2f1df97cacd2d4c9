use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled span with inclusive bounds.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(kind: impl Into<String>, start: usize, end: usize) -> Self {
        Span {
            kind: kind.into(),
            start,
            end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SpanSet {
    pub spans: Vec<Span>,
    /// `I-X` tags that did not continue an `X` span and were read as `B-X`.
    pub repaired: usize,
}

/// Maximal `B-X I-X*` runs. Tags other than `B-`/`I-` count as outside.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> SpanSet {
    let mut out = SpanSet::default();
    let mut open: Option<(String, usize)> = None;
    let close = |open: &mut Option<(String, usize)>, end: usize, spans: &mut Vec<Span>| {
        if let Some((kind, start)) = open.take() {
            spans.push(Span { kind, start, end });
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        if let Some(kind) = tag.strip_prefix("B-") {
            close(&mut open, i.wrapping_sub(1), &mut out.spans);
            open = Some((kind.to_string(), i));
        } else if let Some(kind) = tag.strip_prefix("I-") {
            match &open {
                Some((k, _)) if k == kind => {}
                _ => {
                    close(&mut open, i.wrapping_sub(1), &mut out.spans);
                    out.repaired += 1;
                    open = Some((kind.to_string(), i));
                }
            }
        } else {
            close(&mut open, i.wrapping_sub(1), &mut out.spans);
        }
    }
    close(&mut open, tags.len().wrapping_sub(1), &mut out.spans);
    out
}

/// Renders non-overlapping spans as a BIO sequence of length `len`.
pub fn spans_to_bio(spans: &[Span], len: usize) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::InvalidInput(format!(
                "span {}..={} outside a sentence of length {len}",
                s.start, s.end
            )));
        }
        if tags[s.start..=s.end].iter().any(|t| t != "O") {
            return Err(Error::InvalidInput(format!(
                "span {}..={} overlaps another span",
                s.start, s.end
            )));
        }
        tags[s.start] = format!("B-{}", s.kind);
        for t in &mut tags[s.start + 1..=s.end] {
            *t = format!("I-{}", s.kind);
        }
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_span() {
        let s = extract_spans(&["O", "O", "B-X", "I-X", "O"]);
        assert_eq!(s.spans, vec![Span::new("X", 2, 3)]);
        assert_eq!(s.repaired, 0);
    }

    #[test]
    fn all_outside() {
        assert!(extract_spans(&["O", "O"]).spans.is_empty());
        assert!(extract_spans::<&str>(&[]).spans.is_empty());
    }

    #[test]
    fn return_sentence() {
        let tags = [
            "O",
            "O",
            "O",
            "O",
            "B-ReturnCity",
            "I-ReturnCity",
            "O",
            "B-RETURN.DAY",
            "B-RETURN.PERIODOFDAY",
        ];
        assert_eq!(
            extract_spans(&tags).spans,
            vec![
                Span::new("ReturnCity", 4, 5),
                Span::new("RETURN.DAY", 7, 7),
                Span::new("RETURN.PERIODOFDAY", 8, 8)
            ]
        );
    }

    #[test]
    fn illegal_inside_repaired() {
        let s = extract_spans(&["I-X", "I-X", "I-Y", "O", "I-Z"]);
        assert_eq!(
            s.spans,
            vec![Span::new("X", 0, 1), Span::new("Y", 2, 2), Span::new("Z", 4, 4)]
        );
        assert_eq!(s.repaired, 3);
    }

    #[test]
    fn bio_round_trip() {
        let spans = vec![Span::new("A", 0, 1), Span::new("B", 3, 3)];
        let tags = spans_to_bio(&spans, 5).unwrap();
        assert_eq!(tags, ["B-A", "I-A", "O", "B-B", "O"]);
        assert_eq!(extract_spans(&tags).spans, spans);
        assert!(spans_to_bio(&[Span::new("A", 0, 2), Span::new("B", 2, 2)], 4).is_err());
    }
}
