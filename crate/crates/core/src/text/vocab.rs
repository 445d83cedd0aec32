use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Lowercase, then split on whitespace and at punctuation boundaries.
/// Alphanumeric runs form words; every other visible character is a token
/// of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() && !ch.is_control() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Word-level vocabulary. Ids 0–4 are reserved for the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

/// Coverage figures reported by [`build_vocab`].
#[derive(Debug, Clone, PartialEq)]
pub struct VocabStats {
    pub distinct_tokens: usize,
    pub total_tokens: usize,
    pub kept_tokens: usize,
    /// Fraction of token occurrences in the corpus that map to a non-UNK id.
    pub coverage: f64,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_RESERVED
    }

    /// Content tokens of an id sequence: specials and padding are dropped,
    /// UNK is kept as `[UNK]`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i == UNK || !Self::is_special(i))
            .filter_map(|&i| self.token(i).map(str::to_owned))
            .collect()
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = self.id_to_token.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_RESERVED || lines[..NUM_RESERVED] != RESERVED_TOKENS {
            return Err(Error::Input(format!(
                "{} does not start with the reserved tokens",
                path.display()
            )));
        }
        Self::from_tokens(lines[NUM_RESERVED..].iter().map(|s| s.to_string()).collect())
    }
}

/// Rank corpus tokens by descending frequency, ties broken
/// lexicographically, drop those below `min_freq`, and keep as many as fit
/// in `max_size` alongside the reserved ids.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize, min_freq: usize) -> Result<(Vocab, VocabStats)> {
    if max_size <= NUM_RESERVED {
        return Err(Error::Parameter(format!(
            "max vocabulary size must exceed the {NUM_RESERVED} reserved ids, got {max_size}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for line in corpus {
        for tok in tokenize(line.as_ref()) {
            total += 1;
            *freq.entry(tok).or_default() += 1;
        }
    }
    let distinct = freq.len();
    let mut ranked: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(t, n)| *n >= min_freq.max(1) && !RESERVED_TOKENS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    let covered: usize = ranked.iter().map(|(_, n)| n).sum();
    let kept = ranked.len();
    let vocab = Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())?;
    let stats = VocabStats {
        distinct_tokens: distinct,
        total_tokens: total,
        kept_tokens: kept,
        coverage: if total == 0 { 0.0 } else { covered as f64 / total as f64 },
    };
    Ok((vocab, stats))
}
