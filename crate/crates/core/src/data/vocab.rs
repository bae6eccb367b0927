use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const END: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id bijection with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved entries followed by `words` in order. Duplicates and reserved
    /// strings inside `words` are skipped.
    pub fn from_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in RESERVED.iter().copied().map(str::to_string) {
            v.push(w);
        }
        for w in words {
            let w = w.as_ref();
            if !v.index.contains_key(w) {
                v.push(w.to_string());
            }
        }
        v
    }

    fn push(&mut self, w: String) {
        self.index.insert(w.clone(), self.tokens.len());
        self.tokens.push(w);
    }

    /// Keep the `cap - 4` most frequent tokens; equal counts are ordered
    /// lexicographically so the result does not depend on corpus order.
    pub fn build<'a, I, S>(sequences: I, cap: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        if cap <= RESERVED.len() {
            return Err(Error::contract(format!("vocabulary cap {cap} must exceed 4")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                let tok = tok.as_ref();
                if !RESERVED.contains(&tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - RESERVED.len());
        Ok(Vocab::from_words(ranked.into_iter().map(|(w, _)| w)))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Map an extended-vocabulary id back to a surface token.
    pub fn ext_token<'a>(&'a self, id: usize, oovs: &'a [String]) -> Option<&'a str> {
        if id < self.len() {
            self.token(id)
        } else {
            oovs.get(id - self.len()).map(String::as_str)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Token-per-line file in id order; the first four lines must be the
    /// reserved tokens.
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines = std::io::BufReader::new(f)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_token_list(&lines)
    }

    pub fn from_token_list(tokens: &[String]) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()].iter().zip(RESERVED).any(|(a, b)| a != b)
        {
            return Err(Error::contract(format!(
                "vocabulary must start with the reserved tokens {RESERVED:?}"
            )));
        }
        let v = Vocab::from_words(&tokens[RESERVED.len()..]);
        if v.len() != tokens.len() {
            return Err(Error::contract("vocabulary file contains duplicate tokens"));
        }
        Ok(v)
    }
}
