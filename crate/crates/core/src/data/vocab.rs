use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SignError};

/// Which reserved symbols a vocabulary carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    /// `<pad>`, `<bos>`, `<eos>`, `<unk>` at ids 0..4.
    Word,
    /// `<blank>` at id 0, the CTC blank.
    Gloss,
}

impl VocabKind {
    pub fn reserved(self) -> &'static [&'static str] {
        match self {
            VocabKind::Word => &["<pad>", "<bos>", "<eos>", "<unk>"],
            VocabKind::Gloss => &["<blank>"],
        }
    }
}

/// Bidirectional token ↔ id map.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const BLANK: usize = 0;

    /// Builds a vocabulary from the sorted, de-duplicated tokens.
    pub fn build<'a>(kind: VocabKind, tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut toks: Vec<&str> = tokens
            .into_iter()
            .filter(|t| !kind.reserved().contains(t))
            .collect();
        toks.sort_unstable();
        toks.dedup();
        Self::from_list(kind, toks.into_iter().map(str::to_owned).collect())
    }

    /// Restores a vocabulary from its non-reserved tokens in id order.
    pub fn from_list(kind: VocabKind, tokens: Vec<String>) -> Self {
        let all: Vec<String> = kind
            .reserved()
            .iter()
            .map(|s| (*s).to_owned())
            .chain(tokens)
            .collect();
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            kind,
            tokens: all,
            index,
        }
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    /// Size including reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_reserved(&self) -> usize {
        self.kind.reserved().len()
    }

    /// Non-reserved tokens in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[self.n_reserved()..]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Maps tokens to ids, substituting `<unk>` for unknown words. Returns the
    /// ids and the unknown tokens encountered.
    pub fn encode_lossy<S: AsRef<str>>(&self, tokens: &[S]) -> (Vec<usize>, Vec<String>) {
        let mut unknown = Vec::new();
        let ids = tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref()).unwrap_or_else(|| {
                    unknown.push(t.as_ref().to_owned());
                    Self::UNK
                })
            })
            .collect();
        (ids, unknown)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| SignError::Vocab(format!("unknown token `{}`", t.as_ref())))
            })
            .collect()
    }

    /// Maps ids back to tokens, skipping reserved symbols.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= self.n_reserved())
            .filter_map(|&i| self.token(i).map(str::to_owned))
            .collect()
    }

    /// SHA-256 over the full token list, newline separated.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lowercased whitespace tokenisation used for sentences and BLEU.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
