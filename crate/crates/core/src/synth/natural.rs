//! Fixed-length sequences cut from running text, anchored at sentence starts
//! or sentence ends.
//!
//! A sentence boundary sits after `.`, `!` or `?` followed by whitespace and
//! then an uppercase letter. The very start of the stream counts as a
//! boundary when its first non-whitespace character is uppercase.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};
use crate::tokenizer::tokenize_spans;
use crate::types::{DomainTag, SequenceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRule {
    /// The first token of each sequence is the first token of a sentence.
    SentenceStart,
    /// The last token of each sequence is the last token of a sentence.
    SentenceEnd,
}

impl std::str::FromStr for AnchorRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence_start" => Ok(AnchorRule::SentenceStart),
            "sentence_end" => Ok(AnchorRule::SentenceEnd),
            other => Err(Error::InvalidArgument(format!("unknown anchor rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaturalSelection {
    pub corpus: Corpus,
    pub requested: usize,
    /// True when the stream ran out before `requested` sequences were found.
    pub exhausted: bool,
}

impl NaturalSelection {
    pub fn found(&self) -> usize {
        self.corpus.len()
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Byte index just past the terminal punctuation of the first complete
/// sentence in `text`, if a following boundary is already visible.
fn next_boundary(text: &str) -> Option<usize> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if is_terminal(c) {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j].1.is_uppercase() {
                return Some(pos + c.len_utf8());
            }
        }
        i += 1;
    }
    None
}

/// Cuts a `T`-token window from one sentence, or `None` if it is too short
/// (or, for end anchoring, does not end in terminal punctuation).
fn window(sentence: &str, rule: AnchorRule, tokens: usize) -> Option<String> {
    let spans = tokenize_spans(sentence);
    if spans.len() < tokens || tokens == 0 {
        return None;
    }
    let picked = match rule {
        AnchorRule::SentenceStart => &spans[..tokens],
        AnchorRule::SentenceEnd => {
            let last = spans.last()?;
            if !last.text.chars().all(is_terminal) {
                return None;
            }
            &spans[spans.len() - tokens..]
        }
    };
    let start = picked.first()?.start;
    let end = picked.last()?.end;
    Some(sentence[start..end].to_string())
}

/// Reads `stream` until `sequences` windows of `tokens` tokens are collected.
pub fn select_natural<R: BufRead>(
    stream: R,
    rule: AnchorRule,
    tokens: usize,
    sequences: usize,
) -> Result<NaturalSelection> {
    if tokens == 0 {
        return Err(Error::InvalidArgument("T must be >= 1".into()));
    }
    let mut lines = Vec::with_capacity(sequences.min(1 << 20));
    let mut buffer = String::new();
    let mut at_stream_start = true;
    let mut exhausted = false;
    let mut input = stream.lines();

    let take_sentence = |sentence: &str, starts_at_boundary: bool, lines: &mut Vec<String>| {
        if lines.len() >= sequences {
            return;
        }
        let sentence = sentence.trim();
        if rule == AnchorRule::SentenceStart && !starts_at_boundary {
            return;
        }
        if let Some(w) = window(sentence, rule, tokens) {
            lines.push(w);
        }
    };

    while lines.len() < sequences {
        match input.next() {
            Some(line) => {
                let line = line.map_err(|e| Error::Io {
                    path: "<stream>".into(),
                    source: e,
                })?;
                buffer.push_str(&line);
                buffer.push('\n');
            }
            None => {
                exhausted = true;
                break;
            }
        }
        while let Some(cut) = next_boundary(&buffer) {
            let starts = !at_stream_start || buffer.trim_start().chars().next().is_some_and(char::is_uppercase);
            take_sentence(&buffer[..cut], starts, &mut lines);
            buffer.drain(..cut);
            at_stream_start = false;
        }
    }
    if exhausted && lines.len() < sequences && !buffer.trim().is_empty() {
        let starts = !at_stream_start || buffer.trim_start().chars().next().is_some_and(char::is_uppercase);
        take_sentence(&buffer, starts, &mut lines);
    }
    let exhausted = lines.len() < sequences;
    let corpus = Corpus {
        spec: SequenceSpec::new(tokens, lines.len(), DomainTag::Natural, None)?,
        lines,
        generator_id: match rule {
            AnchorRule::SentenceStart => "natural/sentence_start".into(),
            AnchorRule::SentenceEnd => "natural/sentence_end".into(),
        },
        seed: None,
        variant: None,
    };
    Ok(NaturalSelection {
        corpus,
        requested: sequences,
        exhausted,
    })
}
