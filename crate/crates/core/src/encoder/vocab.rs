use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{GdrError, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const MASK: TokenId = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>", "<mask>"];

/// Lowercases, splits on whitespace and splits ASCII punctuation into
/// separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Normalized text: tokens re-joined with single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Reserved tokens followed by `tokens` in the given order.
    pub fn from_tokens<I, T>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let all: Vec<String> = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
            .collect();
        Self::from_lines(all)
    }

    fn from_lines(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(GdrError::Invalid(format!(
                    "vocabulary line {i} must be reserved token {r}"
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(GdrError::Invalid(format!("vocabulary token {i} is blank or has whitespace")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(GdrError::Invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokenizes `text`; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined surface form. EOS ends the text; PAD and BOS are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                _ => words.push(self.token(id).unwrap_or(RESERVED_TOKENS[UNK])),
            }
        }
        words.join(" ")
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| GdrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GdrError::io(path, e))?;
        Self::from_lines(text.lines().map(str::to_string).collect())
    }
}

/// Validated token id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, vocab_size: usize, max_len: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(GdrError::Empty("token sequence"));
        }
        if ids.len() > max_len {
            return Err(GdrError::OutOfRange {
                what: "sequence length",
                value: ids.len(),
                limit: max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab_size) {
            return Err(GdrError::OutOfRange {
                what: "token id",
                value: bad,
                limit: vocab_size,
            });
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("Hi, I'm  FINE."), vec!["hi", ",", "i", "'", "m", "fine", "."]);
        assert_eq!(normalize("  What?!  "), "what ? !");
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::from_tokens(["tea", "i"]).unwrap();
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(MASK), Some("<mask>"));
        assert_eq!(v.id("tea"), 5);
        assert_eq!(v.id("coffee"), UNK);
        assert_eq!(v.encode("I like tea"), vec![6, UNK, 5]);
        assert_eq!(v.decode(&[6, MASK, 5, EOS, 6]), "i <mask> tea");
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocab::from_tokens(["a", "b", "."]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        std::fs::write(&p, "a\nb\n").unwrap();
        assert!(Vocab::load(&p).is_err());
        assert!(Vocab::from_tokens(["a", "a"]).is_err());
    }

    #[test]
    fn token_sequence_validation() {
        assert!(TokenSequence::new(vec![], 10, 5).is_err());
        assert!(TokenSequence::new(vec![1; 6], 10, 5).is_err());
        assert!(TokenSequence::new(vec![10], 10, 5).is_err());
        assert_eq!(TokenSequence::new(vec![5, 6], 10, 5).unwrap().len(), 2);
    }
}
