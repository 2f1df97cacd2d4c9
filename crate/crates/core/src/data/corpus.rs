use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized sentence with optional slot tags and intent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub tags: Option<Vec<String>>,
    pub intent: Option<String>,
}

impl Example {
    pub fn new(tokens: Vec<String>, tags: Option<Vec<String>>, intent: Option<String>) -> Self {
        Example {
            tokens,
            tags,
            intent,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Same tokens with labels removed.
    pub fn unlabeled(&self) -> Example {
        Example::new(self.tokens.clone(), None, None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Columns,
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "columns" => Ok(CorpusFormat::Columns),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// Checks a BIO sequence; on failure returns the offending position.
pub fn check_bio(tags: &[String]) -> std::result::Result<(), (usize, String)> {
    let mut prev: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        if tag == "O" {
            prev = None;
        } else if let Some(ty) = tag.strip_prefix("B-") {
            if ty.is_empty() {
                return Err((i, format!("tag `{tag}` has no type")));
            }
            prev = Some(ty);
        } else if let Some(ty) = tag.strip_prefix("I-") {
            if prev != Some(ty) {
                return Err((i, format!("`{tag}` does not continue a {ty} span")));
            }
        } else {
            return Err((i, format!("`{tag}` is not a BIO tag")));
        }
    }
    Ok(())
}

const INTENT_HEADER: &str = "# intent:";

pub fn parse_columns(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut tagged_corpus: Option<bool> = None;
    let mut intent: Option<String> = None;
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut tag_lines: Vec<usize> = Vec::new();
    let mut header_line = 0;

    let mut finish = |intent: &mut Option<String>,
                      tokens: &mut Vec<String>,
                      tags: &mut Vec<String>,
                      tag_lines: &mut Vec<usize>,
                      header_line: usize|
     -> Result<()> {
        if tokens.is_empty() {
            if intent.is_some() {
                return Err(Error::Parse {
                    line: header_line,
                    message: "intent header without tokens".into(),
                });
            }
            return Ok(());
        }
        let has_tags = !tags.is_empty();
        if let Err((i, message)) = check_bio(tags) {
            return Err(Error::Parse {
                line: tag_lines[i],
                message,
            });
        }
        out.push(Example::new(
            std::mem::take(tokens),
            has_tags.then(|| std::mem::take(tags)),
            intent.take(),
        ));
        tags.clear();
        tag_lines.clear();
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            finish(&mut intent, &mut tokens, &mut tags, &mut tag_lines, header_line)?;
            continue;
        }
        if let Some(rest) = line.strip_prefix(INTENT_HEADER) {
            if !tokens.is_empty() || intent.is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "intent header must start a sentence".into(),
                });
            }
            let label = rest.trim();
            if label.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty intent label".into(),
                });
            }
            intent = Some(label.to_string());
            header_line = line_no;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let has_tag = match fields.as_slice() {
            [tok] if !tok.is_empty() => false,
            [tok, tag] if !tok.is_empty() && !tag.is_empty() => true,
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `token` or `token<TAB>tag`, found `{line}`"),
                })
            }
        };
        match tagged_corpus {
            None => tagged_corpus = Some(has_tag),
            Some(t) if t != has_tag => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "tag column must be present on every line or on none".into(),
                })
            }
            _ => {}
        }
        tokens.push(fields[0].to_string());
        if has_tag {
            tags.push(fields[1].to_string());
            tag_lines.push(line_no);
        }
    }
    finish(&mut intent, &mut tokens, &mut tags, &mut tag_lines, header_line)?;
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonExample {
    tokens: Vec<String>,
    #[serde(default)]
    tags: Option<Vec<String>>,
    #[serde(default)]
    intent: Option<String>,
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        if parsed.tokens.is_empty() {
            return Err(bad("sentence has no tokens".into()));
        }
        if let Some(tags) = &parsed.tags {
            if tags.len() != parsed.tokens.len() {
                return Err(bad(format!(
                    "{} tokens but {} tags",
                    parsed.tokens.len(),
                    tags.len()
                )));
            }
            check_bio(tags).map_err(|(i, m)| bad(format!("tag {i}: {m}")))?;
        }
        out.push(Example::new(parsed.tokens, parsed.tags, parsed.intent));
    }
    Ok(out)
}

pub fn parse_str(text: &str, format: CorpusFormat) -> Result<Vec<Example>> {
    match format {
        CorpusFormat::Columns => parse_columns(text),
        CorpusFormat::Jsonl => parse_jsonl(text),
    }
}

pub fn parse_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, format)
}

pub fn write_columns(corpus: &[Example]) -> String {
    let mut out = String::new();
    for (n, ex) in corpus.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        if let Some(intent) = &ex.intent {
            let _ = writeln!(out, "{INTENT_HEADER}\t{intent}");
        }
        for (i, tok) in ex.tokens.iter().enumerate() {
            match &ex.tags {
                Some(tags) => {
                    let _ = writeln!(out, "{tok}\t{}", tags[i]);
                }
                None => {
                    let _ = writeln!(out, "{tok}");
                }
            }
        }
    }
    out
}

pub fn write_jsonl(corpus: &[Example]) -> String {
    let mut out = String::new();
    for ex in corpus {
        out.push_str(&serde_json::to_string(ex).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(corpus: &[Example], format: CorpusFormat) -> String {
    match format {
        CorpusFormat::Columns => write_columns(corpus),
        CorpusFormat::Jsonl => write_jsonl(corpus),
    }
}
