use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
const N_SPECIAL: usize = 3;

/// Token vocabulary for the encoder. Ids `0..3` are reserved for PAD, UNK
/// and CLS; corpus tokens start at 3. Specials have no surface form, so a
/// corpus token spelled `<pad>` is an ordinary token.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Most frequent tokens first (ties lexicographic), capped at `max_tokens`
    /// corpus entries.
    pub fn build<'a, I, D>(corpus: I, max_tokens: usize) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in corpus {
            for t in doc {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_tokens);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect())
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + N_SPECIAL))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len() + N_SPECIAL
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            PAD => Some("<pad>"),
            UNK => Some("<unk>"),
            CLS => Some("<cls>"),
            _ => self.tokens.get(id - N_SPECIAL).map(String::as_str),
        }
    }

    /// `[CLS, ids...]` truncated to `max_len` positions.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        std::iter::once(CLS)
            .chain(tokens.iter().map(|t| self.id(t)))
            .take(max_len.max(1))
            .collect()
    }
}
