//! The closed toy vocabulary and text conditions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub u32);

/// Padding; a condition made only of padding is the null prompt.
pub const PAD: TokenId = TokenId(0);
pub const SCENE: TokenId = TokenId(1);
pub const RAIN: TokenId = TokenId(2);
pub const LIGHT: TokenId = TokenId(3);
pub const HEAVY: TokenId = TokenId(4);
pub const SNOW: TokenId = TokenId(5);

const WORDS: [&str; 6] = ["<pad>", "scene", "rain", "light", "heavy", "snow"];

pub const VOCAB_SIZE: usize = WORDS.len();

pub fn token_for(word: &str) -> Result<TokenId> {
    WORDS
        .iter()
        .position(|w| *w == word)
        .filter(|&i| i != 0)
        .map(|i| TokenId(i as u32))
        .ok_or_else(|| Error::UnknownToken(word.to_string()))
}

pub fn word_for(id: TokenId) -> Result<&'static str> {
    WORDS
        .get(id.0 as usize)
        .copied()
        .ok_or_else(|| Error::UnknownToken(format!("#{}", id.0)))
}

/// One slot of a text condition: a vocabulary token, or a raw embedding
/// vector injected in place of a token (used by the mean-embedding prompt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSlot {
    Token(TokenId),
    Embedding(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCondition {
    slots: Vec<TextSlot>,
}

impl TextCondition {
    /// The empty prompt: every slot padding.
    pub fn null(text_len: usize) -> Self {
        Self {
            slots: vec![TextSlot::Token(PAD); text_len],
        }
    }

    pub fn from_tokens(tokens: &[TokenId], text_len: usize) -> Result<Self> {
        if tokens.len() > text_len {
            return Err(Error::InvalidArgument(format!(
                "{} tokens exceed text length {text_len}",
                tokens.len()
            )));
        }
        for &t in tokens {
            word_for(t)?;
        }
        let mut slots: Vec<TextSlot> = tokens.iter().map(|&t| TextSlot::Token(t)).collect();
        slots.resize(text_len, TextSlot::Token(PAD));
        Ok(Self { slots })
    }

    /// Whitespace-separated words from the vocabulary, right-padded.
    pub fn parse(prompt: &str, text_len: usize) -> Result<Self> {
        let tokens = prompt
            .split_whitespace()
            .map(token_for)
            .collect::<Result<Vec<_>>>()?;
        Self::from_tokens(&tokens, text_len)
    }

    pub fn from_slots(slots: Vec<TextSlot>) -> Self {
        Self { slots }
    }

    pub fn slots(&self) -> &[TextSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_null(&self) -> bool {
        self.slots
            .iter()
            .all(|s| matches!(s, TextSlot::Token(t) if *t == PAD))
    }

    /// Token ids, or `None` if the condition carries injected embeddings.
    pub fn token_ids(&self) -> Option<Vec<TokenId>> {
        self.slots
            .iter()
            .map(|s| match s {
                TextSlot::Token(t) => Some(*t),
                TextSlot::Embedding(_) => None,
            })
            .collect()
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.slots
            .iter()
            .any(|s| matches!(s, TextSlot::Token(t) if *t == token))
    }
}

impl fmt::Display for TextCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut words = Vec::new();
        for s in &self.slots {
            match s {
                TextSlot::Token(t) if *t == PAD => {}
                TextSlot::Token(t) => words.push(word_for(*t).unwrap_or("<unk>").to_string()),
                TextSlot::Embedding(_) => words.push("<embedding>".to_string()),
            }
        }
        if words.is_empty() {
            write!(f, "<null>")
        } else {
            write!(f, "{}", words.join(" "))
        }
    }
}
