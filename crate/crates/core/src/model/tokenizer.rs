//! Whitespace word tokenizer with task identifiers as single tokens.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";
pub const EOS: &str = "<eos>";
pub const NEWLINE: &str = "\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    specials: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let specials = tokens
            .iter()
            .filter(|t| t.starts_with('<') && t.ends_with('>') && t.len() > 2)
            .cloned()
            .collect();
        Self {
            tokens,
            specials,
            index,
        }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Reserved tokens first (in the given order), then every word of `texts`
    /// in sorted order, so the same corpus always yields the same ids.
    pub fn build<'a>(identifiers: &[&str], texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = [UNK, SEP, EOS, NEWLINE]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(identifiers.iter().map(|s| s.to_string()));
        let mut words = BTreeSet::new();
        let probe = Self::from(tokens.clone());
        for text in texts {
            for piece in probe.split(text) {
                if !probe.index.contains_key(piece) {
                    words.insert(piece.to_string());
                }
            }
        }
        tokens.extend(words);
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn eos(&self) -> usize {
        self.id(EOS)
    }

    pub fn sep(&self) -> usize {
        self.id(SEP)
    }

    /// Splits into reserved tokens, newlines and whitespace-separated words.
    fn split<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            rest = rest.trim_start_matches([' ', '\t', '\r']);
            if rest.is_empty() {
                break;
            }
            if let Some(r) = rest.strip_prefix('\n') {
                out.push(&rest[..1]);
                rest = r;
                continue;
            }
            if let Some(s) = self.specials.iter().find(|s| rest.starts_with(s.as_str())) {
                out.push(&rest[..s.len()]);
                rest = &rest[s.len()..];
                continue;
            }
            let end = rest.find(|c: char| c.is_whitespace()).unwrap_or(rest.len());
            out.push(&rest[..end]);
            rest = &rest[end..];
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.split(text).into_iter().map(|t| self.id(t)).collect()
    }

    /// Inverse of [`Vocabulary::encode`] up to whitespace normalization.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id);
            if tok == NEWLINE {
                out.push('\n');
                continue;
            }
            if !out.is_empty() && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}
