use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Character-level vocabulary with two special tokens appended after the
/// characters: a prompt/answer separator and an end marker. The end marker
/// also opens every sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerSpec", into = "TokenizerSpec")]
pub struct Tokenizer {
    chars: Vec<char>,
    index: HashMap<char, TokenId>,
}

/// Serialized form of a [`Tokenizer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub chars: String,
    pub specials: Vec<String>,
}

pub const SPECIALS: [&str; 2] = ["<sep>", "<eos>"];

impl From<TokenizerSpec> for Tokenizer {
    fn from(spec: TokenizerSpec) -> Self {
        Tokenizer::from_chars(spec.chars.chars())
    }
}

impl From<Tokenizer> for TokenizerSpec {
    fn from(t: Tokenizer) -> Self {
        TokenizerSpec {
            chars: t.chars.iter().collect(),
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Tokenizer {
    /// Sorted, de-duplicated characters; ids are dense from 0.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut chars: Vec<char> = chars.into_iter().collect();
        chars.sort_unstable();
        chars.dedup();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i as TokenId)).collect();
        Tokenizer { chars, index }
    }

    /// Printable ASCII plus newline.
    pub fn ascii() -> Self {
        Tokenizer::from_chars((b' '..=b'~').map(char::from).chain(['\n']))
    }

    pub fn vocab_size(&self) -> usize {
        self.chars.len() + SPECIALS.len()
    }

    pub fn sep(&self) -> TokenId {
        self.chars.len() as TokenId
    }

    pub fn eos(&self) -> TokenId {
        self.chars.len() as TokenId + 1
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| self.index.get(&ch).copied().ok_or(Error::Unencodable { ch, position }))
            .collect()
    }

    /// Specials decode to nothing.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens.iter().filter_map(|&t| self.chars.get(t as usize)).collect()
    }

    pub fn can_encode(&self, text: &str) -> bool {
        text.chars().all(|c| self.index.contains_key(&c))
    }

    /// `<eos> prompt <sep> completion <eos>` and the index of the first
    /// completion token.
    pub fn encode_pair(&self, prompt: &str, completion: &str) -> Result<(Vec<TokenId>, usize)> {
        let p = self.encode(prompt)?;
        let c = self.encode(completion)?;
        let mut seq = Vec::with_capacity(p.len() + c.len() + 3);
        seq.push(self.eos());
        seq.extend(p);
        seq.push(self.sep());
        let start = seq.len();
        seq.extend(c);
        seq.push(self.eos());
        Ok((seq, start))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_dense_ids() {
        let t = Tokenizer::ascii();
        let s = "Hello, world! ~";
        assert_eq!(t.decode(&t.encode(s).unwrap()), s);
        assert_eq!(t.vocab_size(), 95 + 1 + 2);
        assert_eq!(t.eos() as usize, t.vocab_size() - 1);
    }

    #[test]
    fn unknown_char_errors() {
        let t = Tokenizer::from_chars("ab".chars());
        assert!(matches!(
            t.encode("abc"),
            Err(Error::Unencodable { ch: 'c', position: 2 })
        ));
    }

    #[test]
    fn pair_layout() {
        let t = Tokenizer::from_chars("ab".chars());
        let (seq, start) = t.encode_pair("a", "bb").unwrap();
        assert_eq!(seq, vec![3, 0, 2, 1, 1, 3]);
        assert_eq!(start, 3);
    }

    #[test]
    fn serde_roundtrip() {
        let t = Tokenizer::from_chars("xyz ".chars());
        let json = serde_json::to_string(&t).unwrap();
        let back: Tokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
