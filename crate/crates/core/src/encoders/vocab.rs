use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sgparse::MASK_TOKEN;

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK: usize = 0;
pub const MASK: usize = 1;

/// Token → row mapping. Rows 0 and 1 are reserved for `<unk>` and `<mask>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocab {
    /// Builds a vocabulary from tokens in first-seen order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK_TOKEN);
        v.insert(MASK_TOKEN);
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Row for a token; unknown tokens map to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, phrase: &[String]) -> Vec<usize> {
        phrase.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode_phrase(&self, phrase: &str) -> Vec<usize> {
        phrase.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < 2 || tokens[0] != UNK_TOKEN || tokens[1] != MASK_TOKEN {
            return Err(Error::format("vocabulary must start with <unk> and <mask>"));
        }
        let v = Self::from_tokens(tokens.iter().skip(2));
        if v.len() != tokens.len() {
            return Err(Error::format("vocabulary contains duplicate tokens"));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
