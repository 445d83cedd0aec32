use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{LabelSchema, Subtask};
use super::vocab::{tokenize, Vocab, CLS, PAD, SEP};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["id", "text", "label_sexist", "label_category", "label_vector"];

/// Default sequence length for short social-media posts.
pub const DEFAULT_MAX_LEN: usize = 64;

/// A labeled (or unlabeled) post after schema validation, before encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRow {
    pub id: String,
    pub text: String,
    pub label_a: Option<usize>,
    pub label_b: Option<usize>,
    pub label_c: Option<usize>,
}

impl LabeledRow {
    pub fn label(&self, subtask: Subtask) -> Option<usize> {
        match subtask {
            Subtask::A => self.label_a,
            Subtask::B => self.label_b,
            Subtask::C => self.label_c,
        }
    }
}

/// Fixed-length encoded text with its labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedExample {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
    pub label_a: Option<usize>,
    pub label_b: Option<usize>,
    pub label_c: Option<usize>,
}

impl TokenizedExample {
    pub fn label(&self, subtask: Subtask) -> Option<usize> {
        match subtask {
            Subtask::A => self.label_a,
            Subtask::B => self.label_b,
            Subtask::C => self.label_c,
        }
    }

    /// Number of real (unpadded) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// `[CLS] tokens… [SEP]`, truncated then padded to `max_len`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenizedExample> {
    if max_len < 3 {
        return Err(Error::Parameter(format!("max_len must be at least 3, got {max_len}")));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(tokenize(text).iter().take(max_len - 2).map(|t| vocab.id(t)));
    ids.push(SEP);
    let real = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    Ok(TokenizedExample {
        id: String::new(),
        token_ids: ids,
        attention_mask: mask,
        label_a: None,
        label_b: None,
        label_c: None,
    })
}

pub fn encode_row(row: &LabeledRow, vocab: &Vocab, max_len: usize) -> Result<TokenizedExample> {
    let mut ex = encode(&row.text, vocab, max_len)?;
    ex.id = row.id.clone();
    ex.label_a = row.label_a;
    ex.label_b = row.label_b;
    ex.label_c = row.label_c;
    Ok(ex)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Per-class tallies for each subtask.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ClassCounts {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
}

impl ClassCounts {
    pub fn for_subtask(&self, subtask: Subtask) -> &[usize] {
        match subtask {
            Subtask::A => &self.a,
            Subtask::B => &self.b,
            Subtask::C => &self.c,
        }
    }

    fn tally<'a>(examples: impl Iterator<Item = &'a TokenizedExample>) -> Self {
        let mut counts = ClassCounts {
            a: vec![0; Subtask::A.arity()],
            b: vec![0; Subtask::B.arity()],
            c: vec![0; Subtask::C.arity()],
        };
        for ex in examples {
            for (slot, label) in [
                (&mut counts.a, ex.label_a),
                (&mut counts.b, ex.label_b),
                (&mut counts.c, ex.label_c),
            ] {
                if let Some(l) = label {
                    slot[l] += 1;
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    split: Split,
    examples: Vec<TokenizedExample>,
    counts: ClassCounts,
}

impl Dataset {
    /// Validates id uniqueness and the label hierarchy, then tallies counts.
    pub fn new(split: Split, examples: Vec<TokenizedExample>, schema: &LabelSchema) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::Input(format!("duplicate example id `{}`", ex.id)));
            }
            check_hierarchy(&format!("example `{}`", ex.id), ex.label_a, ex.label_b, ex.label_c, schema)?;
        }
        let counts = ClassCounts::tally(examples.iter());
        Ok(Self {
            split,
            examples,
            counts,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn examples(&self) -> &[TokenizedExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn counts(&self) -> &ClassCounts {
        &self.counts
    }

    /// Examples carrying a gold label for `subtask`. For B and C this is
    /// exactly the gold-sexist subset.
    pub fn labeled(&self, subtask: Subtask) -> Vec<&TokenizedExample> {
        self.examples.iter().filter(|e| e.label(subtask).is_some()).collect()
    }

    /// Union with another dataset (train + dev retraining).
    pub fn merged(&self, other: &Dataset, schema: &LabelSchema) -> Result<Dataset> {
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Dataset::new(self.split, examples, schema)
    }
}

fn check_hierarchy(who: &str, a: Option<usize>, b: Option<usize>, c: Option<usize>, schema: &LabelSchema) -> Result<()> {
    let sexist = a == Some(schema.positive());
    if (b.is_some() || c.is_some()) && !sexist {
        return Err(Error::Consistency(format!(
            "{who}: category/vector labels require the sexist label"
        )));
    }
    if sexist && b.is_none() {
        return Err(Error::Consistency(format!("{who}: sexist row without a category label")));
    }
    if let (Some(b), Some(c)) = (b, c) {
        if schema.parent(c) != b {
            return Err(Error::Consistency(format!(
                "{who}: vector `{}` does not belong to category `{}`",
                schema.labels(Subtask::C)[c],
                schema.labels(Subtask::B)[b]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default)]
    label_sexist: String,
    #[serde(default)]
    label_category: String,
    #[serde(default)]
    label_vector: String,
}

fn parse_record(rec: RawRecord, rowno: usize, schema: &LabelSchema) -> Result<LabeledRow> {
    let lookup = |subtask: Subtask, s: &str| -> Result<Option<usize>> {
        if s.trim().is_empty() {
            return Ok(None);
        }
        schema
            .id(subtask, s)
            .map(Some)
            .map_err(|e| Error::Schema(format!("row {rowno} (id `{}`): {e}", rec.id)))
    };
    let label_a = lookup(Subtask::A, &rec.label_sexist)?;
    let label_b = lookup(Subtask::B, &rec.label_category)?;
    let label_c = lookup(Subtask::C, &rec.label_vector)?;
    check_hierarchy(&format!("row {rowno} (id `{}`)", rec.id), label_a, label_b, label_c, schema)?;
    Ok(LabeledRow {
        id: rec.id,
        text: rec.text,
        label_a,
        label_b,
        label_c,
    })
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("json") | Some("ndjson")
    )
}

/// Read and validate labeled rows from CSV (the default) or JSON lines
/// (`.jsonl`). Row numbers in errors are 1-based data rows.
pub fn read_rows(path: &Path, schema: &LabelSchema) -> Result<Vec<LabeledRow>> {
    let mut rows = Vec::new();
    if is_jsonl(path) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: RawRecord = serde_json::from_str(line)
                .map_err(|e| Error::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
            rows.push(parse_record(rec, i + 1, schema)?);
        }
    } else {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header != CSV_HEADER {
            return Err(Error::Input(format!(
                "{}: expected header `{}`, found `{}`",
                path.display(),
                CSV_HEADER.join(","),
                header.join(",")
            )));
        }
        for (i, rec) in rdr.deserialize::<RawRecord>().enumerate() {
            let rec = rec.map_err(|e| Error::Input(format!("{} row {}: {e}", path.display(), i + 1)))?;
            rows.push(parse_record(rec, i + 1, schema)?);
        }
    }
    let mut seen = HashSet::with_capacity(rows.len());
    if let Some(dup) = rows.iter().find(|r| !seen.insert(r.id.clone())) {
        return Err(Error::Input(format!("{}: duplicate id `{}`", path.display(), dup.id)));
    }
    Ok(rows)
}

/// Write rows back out in the CSV interchange format.
pub fn write_rows(path: &Path, rows: &[LabeledRow], schema: &LabelSchema) -> Result<()> {
    let io = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let name = |s: Subtask, l: Option<usize>| l.map(|l| schema.labels(s)[l].clone()).unwrap_or_default();
    for r in rows {
        w.serialize(RawRecord {
            id: r.id.clone(),
            text: r.text.clone(),
            label_sexist: name(Subtask::A, r.label_a),
            label_category: name(Subtask::B, r.label_b),
            label_vector: name(Subtask::C, r.label_c),
        })
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_rows(rows: &[LabeledRow], vocab: &Vocab, max_len: usize, split: Split, schema: &LabelSchema) -> Result<Dataset> {
    let examples = rows
        .iter()
        .map(|r| encode_row(r, vocab, max_len))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(split, examples, schema)
}

pub fn load_dataset(path: &Path, schema: &LabelSchema, vocab: &Vocab, max_len: usize, split: Split) -> Result<Dataset> {
    let rows = read_rows(path, schema)?;
    encode_rows(&rows, vocab, max_len, split, schema)
}

/// Unlabeled corpus: one document per non-blank line.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::{build_vocab, UNK};
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn encode_empty_text() {
        let (v, _) = build_vocab(&["x"], 10, 1).unwrap();
        let ex = encode("", &v, 5).unwrap();
        assert_eq!(ex.token_ids, vec![CLS, SEP, PAD, PAD, PAD]);
        assert_eq!(ex.attention_mask, vec![1, 1, 0, 0, 0]);
    }

    #[test]
    fn encode_hello_world() {
        let (v, _) = build_vocab(&["hello , world"], 20, 1).unwrap();
        let ex = encode("Hello, world", &v, 6).unwrap();
        assert_eq!(
            ex.token_ids,
            vec![CLS, v.id("hello"), v.id(","), v.id("world"), SEP, PAD]
        );
        assert_eq!(ex.attention_mask, vec![1, 1, 1, 1, 1, 0]);
    }

    #[test]
    fn encode_truncates() {
        let text = vec!["w"; 100].join(" ");
        let (v, _) = build_vocab(&[text.as_str()], 10, 1).unwrap();
        let ex = encode(&text, &v, 8).unwrap();
        assert_eq!(ex.token_ids.iter().filter(|&&t| t == v.id("w")).count(), 6);
        assert!(ex.attention_mask.iter().all(|&m| m == 1));
        assert_eq!(ex.token_ids[7], SEP);
    }

    #[test]
    fn encode_maps_oov_to_unk() {
        let (v, _) = build_vocab(&["known"], 10, 1).unwrap();
        let ex = encode("known unknown", &v, 6).unwrap();
        assert_eq!(ex.token_ids[2], UNK);
        assert!(encode("x", &v, 2).is_err());
    }

    #[test]
    fn csv_rows_follow_the_hierarchy() {
        let dir = tempfile::tempdir().unwrap();
        let schema = LabelSchema::default();
        let p = write(
            dir.path(),
            "ok.csv",
            "id,text,label_sexist,label_category,label_vector\n\
             r1,\"hello, there\",not sexist,,\n\
             r2,\"…\",sexist,2. derogation,2.3 dehumanising attacks & overt sexual objectification\n",
        );
        let rows = read_rows(&p, &schema).unwrap();
        assert_eq!(rows[0].label_a, Some(0));
        assert_eq!(rows[0].label_b, None);
        assert_eq!(rows[0].text, "hello, there");
        assert_eq!(rows[1].label_a, Some(1));
        assert_eq!(rows[1].label_b, Some(1));
        assert_eq!(schema.parent(rows[1].label_c.unwrap()), 1);
    }

    #[test]
    fn csv_hierarchy_violation_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let schema = LabelSchema::default();
        let p = write(
            dir.path(),
            "bad.csv",
            "id,text,label_sexist,label_category,label_vector\n\
             r1,x,not sexist,,\n\
             r2,\"…\",not sexist,2. derogation,\n",
        );
        let err = read_rows(&p, &schema).unwrap_err();
        assert_eq!(err.category(), "consistency");
        assert!(err.to_string().contains("row 2"), "{err}");

        let p = write(
            dir.path(),
            "wrongparent.csv",
            "id,text,label_sexist,label_category,label_vector\n\
             r1,x,sexist,1. threats, plans to harm and incitement,2.1 descriptive attacks\n",
        );
        // unquoted comma in the category shifts columns: the CSV layer rejects it
        assert!(read_rows(&p, &schema).is_err());

        let p = write(
            dir.path(),
            "wrongparent2.csv",
            "id,text,label_sexist,label_category,label_vector\n\
             r1,x,sexist,3. animosity,2.1 descriptive attacks\n",
        );
        assert_eq!(read_rows(&p, &schema).unwrap_err().category(), "consistency");
    }

    #[test]
    fn unknown_label_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "u.csv",
            "id,text,label_sexist,label_category,label_vector\nr1,x,maybe,,\n",
        );
        assert_eq!(read_rows(&p, &LabelSchema::default()).unwrap_err().category(), "schema");
    }

    #[test]
    fn header_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", "id,body,a,b,c\nr1,x,sexist,,\n");
        assert_eq!(read_rows(&p, &LabelSchema::default()).unwrap_err().category(), "input");
    }

    #[test]
    fn jsonl_and_csv_agree() {
        let dir = tempfile::tempdir().unwrap();
        let schema = LabelSchema::default();
        let p = write(
            dir.path(),
            "d.jsonl",
            "{\"id\":\"r1\",\"text\":\"a b\",\"label_sexist\":\"sexist\",\"label_category\":\"3. animosity\",\"label_vector\":\"3.3 backhanded gendered compliments\"}\n\
             {\"id\":\"r2\",\"text\":\"c\",\"label_sexist\":\"not sexist\",\"label_category\":\"\",\"label_vector\":\"\"}\n",
        );
        let rows = read_rows(&p, &schema).unwrap();
        let q = dir.path().join("d.csv");
        write_rows(&q, &rows, &schema).unwrap();
        assert_eq!(read_rows(&q, &schema).unwrap(), rows);
    }

    #[test]
    fn dataset_counts_and_duplicates() {
        let schema = LabelSchema::default();
        let (v, _) = build_vocab(&["a"], 10, 1).unwrap();
        let rows = vec![
            LabeledRow { id: "1".into(), text: "a".into(), label_a: Some(0), label_b: None, label_c: None },
            LabeledRow { id: "2".into(), text: "a".into(), label_a: Some(1), label_b: Some(2), label_c: Some(6) },
        ];
        let ds = encode_rows(&rows, &v, 8, Split::Train, &schema).unwrap();
        assert_eq!(ds.counts().a, vec![1, 1]);
        assert_eq!(ds.counts().b.iter().sum::<usize>(), 1);
        assert_eq!(ds.labeled(Subtask::B).len(), 1);
        let dup = vec![rows[0].clone(), rows[0].clone()];
        assert_eq!(encode_rows(&dup, &v, 8, Split::Train, &schema).unwrap_err().category(), "input");
    }
}
