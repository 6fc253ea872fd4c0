use std::collections::HashMap;

use crate::{LmError, Result};

pub const UNK: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// Token ↔ id map. Id 0 is always [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(LmError::Checkpoint(format!("vocabulary must start with {UNK}")));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(LmError::Checkpoint(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        tokens.into_iter().map(|t| self.id(t)).collect()
    }
}

/// Keeps the `max_size - 1` most frequent tokens (ties broken
/// lexicographically) after the reserved unknown token.
pub fn build_vocab<'a>(tokens: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Vocab> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut any = false;
    for t in tokens {
        any = true;
        *counts.entry(t).or_default() += 1;
    }
    if !any {
        return Err(LmError::Empty("token stream"));
    }
    counts.remove(UNK);
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut list = vec![UNK.to_string()];
    list.extend(ranked.into_iter().take(max_size.saturating_sub(1)).map(|(t, _)| t.to_string()));
    Vocab::from_tokens(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic() {
        let v = build_vocab("a b a".split_whitespace(), 10).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "a", "b"]);
        let v = build_vocab("c b a b c".split_whitespace(), 3).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "b", "c"]);
        assert_eq!(v.id("a"), UNK_ID);
    }

    #[test]
    fn size_one_keeps_only_unk() {
        let v = build_vocab("x y z".split_whitespace(), 1).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.encode(["x", "q"]), vec![0, 0]);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(build_vocab(std::iter::empty(), 5).is_err());
    }
}
