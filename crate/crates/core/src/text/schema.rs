//! The three-level label taxonomy: binary → category → vector.
//!
//! Schema files are plain text with three sections:
//!
//! ```text
//! [binary]
//! not sexist
//! sexist
//!
//! [category]
//! 1. threats, plans to harm and incitement
//! ...
//!
//! [vector]
//! 1.1 threats of harm => 1. threats, plans to harm and incitement
//! ...
//! ```
//!
//! The binary section lists the negative label first. Each vector line names
//! its parent category after `=>`. Blank lines and `#` comments are ignored.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BINARY_CLASSES: usize = 2;
pub const CATEGORY_CLASSES: usize = 4;
pub const VECTOR_CLASSES: usize = 11;

/// Level of the taxonomy a classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtask {
    A,
    B,
    C,
}

impl Subtask {
    pub const ALL: [Subtask; 3] = [Subtask::A, Subtask::B, Subtask::C];

    /// Number of output classes.
    pub fn arity(self) -> usize {
        match self {
            Subtask::A => BINARY_CLASSES,
            Subtask::B => CATEGORY_CLASSES,
            Subtask::C => VECTOR_CLASSES,
        }
    }

    pub fn from_arity(n: usize) -> Option<Subtask> {
        Subtask::ALL.into_iter().find(|s| s.arity() == n)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subtask::A => "a",
            Subtask::B => "b",
            Subtask::C => "c",
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subtask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Subtask::A),
            "b" => Ok(Subtask::B),
            "c" => Ok(Subtask::C),
            other => Err(Error::Config(format!("unknown subtask `{other}`, expected a, b or c"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSchema {
    binary: Vec<String>,
    categories: Vec<String>,
    vectors: Vec<String>,
    vector_parent: Vec<usize>,
}

const DEFAULT_SCHEMA: &str = "\
# Default taxonomy for online sexism detection.
[binary]
not sexist
sexist

[category]
1. threats, plans to harm and incitement
2. derogation
3. animosity
4. prejudiced discussions

[vector]
1.1 threats of harm => 1. threats, plans to harm and incitement
1.2 incitement and encouragement of harm => 1. threats, plans to harm and incitement
2.1 descriptive attacks => 2. derogation
2.2 aggressive and emotive attacks => 2. derogation
2.3 dehumanising attacks & overt sexual objectification => 2. derogation
3.1 casual use of gendered slurs, profanities, and insults => 3. animosity
3.2 immutable gender differences and gender stereotypes => 3. animosity
3.3 backhanded gendered compliments => 3. animosity
3.4 condescending explanations or unwelcome advice => 3. animosity
4.1 supporting mistreatment of individual women => 4. prejudiced discussions
4.2 supporting systemic discrimination against women as a group => 4. prejudiced discussions
";

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self::parse(DEFAULT_SCHEMA).expect("built-in schema is valid")
    }
}

impl LabelSchema {
    pub fn new(binary: Vec<String>, categories: Vec<String>, vectors: Vec<String>, vector_parent: Vec<usize>) -> Result<Self> {
        let s = Self {
            binary,
            categories,
            vectors,
            vector_parent,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let count = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Schema(format!("expected {want} {what} labels, found {got}")))
            }
        };
        count("binary", self.binary.len(), BINARY_CLASSES)?;
        count("category", self.categories.len(), CATEGORY_CLASSES)?;
        count("vector", self.vectors.len(), VECTOR_CLASSES)?;
        if self.vector_parent.len() != self.vectors.len() {
            return Err(Error::Schema("every vector needs exactly one parent category".into()));
        }
        if let Some(p) = self.vector_parent.iter().find(|&&p| p >= self.categories.len()) {
            return Err(Error::Schema(format!("parent index {p} is not a category")));
        }
        for list in [&self.binary, &self.categories, &self.vectors] {
            let mut seen: Vec<String> = list.iter().map(|s| norm(s)).collect();
            seen.sort();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Schema("duplicate label name".into()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Binary,
            Category,
            Vector,
        }
        let mut section = Section::None;
        let mut binary = Vec::new();
        let mut categories = Vec::new();
        let mut vectors: Vec<(String, String, usize)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[binary]" => section = Section::Binary,
                "[category]" => section = Section::Category,
                "[vector]" => section = Section::Vector,
                _ => match section {
                    Section::None => {
                        return Err(Error::Schema(format!("line {}: label outside of a section", lineno + 1)));
                    }
                    Section::Binary => binary.push(line.to_string()),
                    Section::Category => categories.push(line.to_string()),
                    Section::Vector => {
                        let (name, parent) = line.split_once("=>").ok_or_else(|| {
                            Error::Schema(format!("line {}: vector needs `=> <category>`", lineno + 1))
                        })?;
                        vectors.push((name.trim().to_string(), parent.trim().to_string(), lineno + 1));
                    }
                },
            }
        }
        let mut vector_parent = Vec::with_capacity(vectors.len());
        for (name, parent, lineno) in &vectors {
            let p = categories.iter().position(|c| norm(c) == norm(parent)).ok_or_else(|| {
                Error::Schema(format!("line {lineno}: vector `{name}` names unknown category `{parent}`"))
            })?;
            vector_parent.push(p);
        }
        Self::new(binary, categories, vectors.into_iter().map(|v| v.0).collect(), vector_parent)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("[binary]\n");
        for b in &self.binary {
            s.push_str(b);
            s.push('\n');
        }
        s.push_str("\n[category]\n");
        for c in &self.categories {
            s.push_str(c);
            s.push('\n');
        }
        s.push_str("\n[vector]\n");
        for (v, &p) in self.vectors.iter().zip(&self.vector_parent) {
            s.push_str(&format!("{v} => {}\n", self.categories[p]));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Id of the positive ("sexist") binary label.
    pub fn positive(&self) -> usize {
        1
    }

    pub fn labels(&self, subtask: Subtask) -> &[String] {
        match subtask {
            Subtask::A => &self.binary,
            Subtask::B => &self.categories,
            Subtask::C => &self.vectors,
        }
    }

    /// Look up a label name, case-insensitively.
    pub fn id(&self, subtask: Subtask, name: &str) -> Result<usize> {
        let n = norm(name);
        self.labels(subtask)
            .iter()
            .position(|l| norm(l) == n)
            .ok_or_else(|| Error::Schema(format!("unknown subtask {subtask} label `{}`", name.trim())))
    }

    pub fn parent(&self, vector: usize) -> usize {
        self.vector_parent[vector]
    }

    pub fn children(&self, category: usize) -> Vec<usize> {
        (0..self.vectors.len())
            .filter(|&v| self.vector_parent[v] == category)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_shape() {
        let s = LabelSchema::default();
        assert_eq!(s.labels(Subtask::A).len(), 2);
        assert_eq!(s.labels(Subtask::B).len(), 4);
        assert_eq!(s.labels(Subtask::C).len(), 11);
        let total: usize = (0..4).map(|c| s.children(c).len()).sum();
        assert_eq!(total, 11);
        let derog = s.id(Subtask::B, "2. derogation").unwrap();
        let v = s.id(Subtask::C, "2.3 dehumanising attacks & overt sexual objectification").unwrap();
        assert_eq!(s.parent(v), derog);
        assert_eq!(s.id(Subtask::A, "Sexist").unwrap(), s.positive());
    }

    #[test]
    fn text_round_trip() {
        let s = LabelSchema::default();
        assert_eq!(LabelSchema::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn rejects_wrong_counts_and_orphans() {
        let text = LabelSchema::default().to_text().replace("4. prejudiced discussions\n\n", "\n");
        assert_eq!(LabelSchema::parse(&text).unwrap_err().category(), "schema");
        let text = "[binary]\nno\nyes\n[category]\na\nb\nc\nd\n[vector]\nx => zzz\n";
        assert!(LabelSchema::parse(text).unwrap_err().to_string().contains("unknown category"));
    }

    #[test]
    fn unknown_label_is_schema_error() {
        let s = LabelSchema::default();
        assert_eq!(s.id(Subtask::B, "5. nonsense").unwrap_err().category(), "schema");
    }

    #[test]
    fn subtask_arity() {
        assert_eq!(Subtask::A.arity(), 2);
        assert_eq!(Subtask::B.arity(), 4);
        assert_eq!(Subtask::C.arity(), 11);
        assert_eq!("C".parse::<Subtask>().unwrap(), Subtask::C);
        assert!("d".parse::<Subtask>().is_err());
    }
}
