//! Whitespace/punctuation tokenizer with an explicit vocabulary.
//!
//! Rules:
//! - a maximal run of alphanumeric characters is one token;
//! - every other non-whitespace character is a token on its own;
//! - whitespace separates tokens and is dropped, except that a run of two or
//!   more whitespace characters directly before a word fuses one space into
//!   that word (`"a,  Egypt"` yields `" Egypt"`).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A token and its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: std::borrow::Cow<'a, str>,
    pub start: usize,
    pub end: usize,
}

pub fn tokenize_spans(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut pending_space = 0usize;
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            pending_space += 1;
            chars.next();
            continue;
        }
        if c.is_alphanumeric() {
            let mut end = i;
            while let Some(&(j, d)) = chars.peek() {
                if !d.is_alphanumeric() {
                    break;
                }
                end = j + d.len_utf8();
                chars.next();
            }
            let word = &text[i..end];
            let text = if pending_space >= 2 {
                std::borrow::Cow::Owned(format!(" {word}"))
            } else {
                std::borrow::Cow::Borrowed(word)
            };
            tokens.push(Token { text, start: i, end });
        } else {
            chars.next();
            let end = i + c.len_utf8();
            tokens.push(Token {
                text: std::borrow::Cow::Borrowed(&text[i..end]),
                start: i,
                end,
            });
        }
        pending_space = 0;
    }
    tokens
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text.into_owned()).collect()
}

pub fn token_count(text: &str) -> usize {
    tokenize_spans(text).len()
}

/// Token ↔ id mapping. Serialized as a JSON list of tokens in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::new(tokens).map_err(serde::de::Error::custom)
    }
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Every distinct token of `lines`, sorted.
    pub fn from_corpus<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for line in lines {
            set.extend(tokenize(line));
        }
        Self::new(set.into_iter().collect()).expect("set has no duplicates")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// First 16 hex digits of the SHA-256 of the token list.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        tokenize_spans(text)
            .into_iter()
            .map(|t| self.id(&t.text).ok_or_else(|| Error::UnknownToken(t.text.into_owned())))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icl_sequence_has_two_tokens_per_shot() {
        assert_eq!(
            tokenize("France, Mexico, Egypt, Russia,"),
            ["France", ",", "Mexico", ",", "Egypt", ",", "Russia", ","]
        );
    }

    #[test]
    fn double_space_fuses_into_word() {
        assert_eq!(tokenize("France,  Egypt,"), ["France", ",", " Egypt", ","]);
    }

    #[test]
    fn multiword_names_split() {
        assert_eq!(token_count("United States of America"), 4);
    }

    #[test]
    fn arithmetic_prompt_tokens() {
        assert_eq!(
            tokenize("What is 72 divided by 9? A: 8,"),
            ["What", "is", "72", "divided", "by", "9", "?", "A", ":", "8", ","]
        );
    }

    #[test]
    fn spans_point_into_source() {
        let text = "Hi there.";
        let spans = tokenize_spans(text);
        assert_eq!(&text[spans[1].start..spans[1].end], "there");
        assert_eq!(spans[2].text, ".");
    }

    #[test]
    fn vocabulary_encode_and_unknown() {
        let vocab = Vocabulary::from_corpus(["a, b,", "b, c,"]);
        assert_eq!(vocab.tokens(), [",", "a", "b", "c"]);
        assert_eq!(vocab.encode("c, a").unwrap(), vec![3, 0, 1]);
        assert!(matches!(vocab.encode("d"), Err(Error::UnknownToken(t)) if t == "d"));
        let json = serde_json::to_string(&vocab).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), vocab);
        assert!(Vocabulary::new(vec!["x".into(), "x".into()]).is_err());
    }
}
