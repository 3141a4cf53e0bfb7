//! Command dictionary with reserved `<pad>` / `<eoc>` tokens and one-hot
//! encoding.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Result, V2cError};

pub const PAD: &str = "<pad>";
pub const EOC: &str = "<eoc>";
pub const PAD_INDEX: usize = 0;
pub const EOC_INDEX: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// A one-hot vector stored as its dimension and the hot position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    pub dim: usize,
    pub index: usize,
}

impl OneHot {
    pub fn to_dense(self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index] = 1.0;
        v
    }
}

/// A command as fixed-length index sequence plus loss mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCommand {
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Vocabulary {
    /// `[<pad>, <eoc>]` followed by corpus tokens by descending frequency,
    /// ties in lexicographic order.
    pub fn build<S: AsRef<str>>(commands: &[Vec<S>]) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for command in commands {
            for token in command {
                let token = token.as_ref();
                validate_token(token)?;
                *counts.entry(token).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let tokens = [PAD, EOC].into_iter().chain(ranked.into_iter().map(|(t, _)| t)).map(str::to_owned).collect();
        Self::from_tokens(tokens)
    }

    /// Vocabulary from an ordered token list whose first two entries are the
    /// reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD || tokens[EOC_INDEX] != EOC {
            return Err(V2cError::Format(format!("vocabulary must start with `{PAD}` and `{EOC}`")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if i >= 2 {
                validate_token(t).map_err(|e| V2cError::Parse { line: i + 1, message: e.to_string() })?;
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(V2cError::Parse { line: i + 1, message: format!("duplicate token `{t}`") });
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn encode_word(&self, token: &str) -> Result<OneHot> {
        let index = self.index_of(token).ok_or_else(|| V2cError::UnknownToken(token.to_owned()))?;
        Ok(OneHot { dim: self.len(), index })
    }

    pub fn decode_index(&self, index: usize) -> Result<&str> {
        self.token(index).ok_or_else(|| V2cError::Usage(format!("index {index} outside vocabulary of size {}", self.len())))
    }

    /// Word indices, then `<eoc>`, then `<pad>` up to exactly `n` entries.
    pub fn encode_command<S: AsRef<str>>(&self, words: &[S], n: usize) -> Result<EncodedCommand> {
        if words.len() + 1 > n {
            return Err(V2cError::Config(format!(
                "command of {} words does not fit {n} steps (at most {} words plus <eoc>)",
                words.len(),
                n.saturating_sub(1)
            )));
        }
        let mut indices = Vec::with_capacity(n);
        for w in words {
            indices.push(self.encode_word(w.as_ref())?.index);
        }
        indices.push(EOC_INDEX);
        let mut mask = vec![true; indices.len()];
        indices.resize(n, PAD_INDEX);
        mask.resize(n, false);
        Ok(EncodedCommand { indices, mask })
    }

    /// Render indices as words, dropping `<pad>` and stopping at `<eoc>`.
    pub fn render(&self, indices: &[usize]) -> Vec<&str> {
        indices.iter().take_while(|&&i| i != EOC_INDEX).filter(|&&i| i != PAD_INDEX).filter_map(|&i| self.token(i)).collect()
    }

    /// One token per line; line number is the index.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(V2cError::Parse { line: 1, message: format!("expected `{PAD}`") });
        }
        if tokens.get(1).map(String::as_str) != Some(EOC) {
            return Err(V2cError::Parse { line: 2, message: format!("expected `{EOC}`") });
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| V2cError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| V2cError::io(path, e))?;
        Self::from_text(&text)
    }
}

fn validate_token(token: &str) -> Result<()> {
    if token.is_empty() {
        return Err(V2cError::Format("empty token".into()));
    }
    if token.chars().any(char::is_whitespace) {
        return Err(V2cError::Format(format!("token `{token}` contains whitespace")));
    }
    if token == PAD || token == EOC {
        return Err(V2cError::Format(format!("token `{token}` is reserved")));
    }
    Ok(())
}
