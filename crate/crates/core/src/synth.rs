//! Seeded synthetic corpora for demos and tests. Each label owns a few cue
//! words; everything else is shared filler, so signal strength is set
//! directly by how often cues appear.

use crate::rng::SeedRng;
use crate::text::{LabelSchema, LabeledRow, Subtask};

const FILLER: [&str; 40] = [
    "the", "a", "this", "that", "people", "online", "post", "thread", "really", "just", "today", "said", "think",
    "know", "make", "never", "always", "work", "home", "time", "game", "friend", "group", "news", "video", "comment",
    "reply", "week", "again", "still", "more", "other", "some", "every", "thing", "story", "world", "life", "place",
    "year",
];

/// Cue words of vector class `c`; categories and the binary level inherit
/// them through the hierarchy.
pub fn cue_words(c: usize) -> [String; 3] {
    [format!("cue{c}a"), format!("cue{c}b"), format!("cue{c}c")]
}

/// Cue words reserved for the negative binary class.
pub fn neutral_cues() -> [String; 3] {
    ["calm".into(), "kind".into(), "polite".into()]
}

fn filler(rng: &mut SeedRng) -> &'static str {
    FILLER[rng.below(FILLER.len())]
}

/// `len` tokens; each is a cue from `cues` with probability `cue_prob` and
/// filler otherwise. At least one cue is forced when `force_cue` is set.
fn sentence(rng: &mut SeedRng, len: usize, cues: &[String], cue_prob: f64, force_cue: bool) -> String {
    let mut words: Vec<String> = (0..len)
        .map(|_| {
            if rng.uniform() < cue_prob {
                cues[rng.below(cues.len())].clone()
            } else {
                filler(rng).to_string()
            }
        })
        .collect();
    if force_cue && !cues.is_empty() && !words.iter().any(|w| cues.contains(w)) {
        let at = rng.below(len);
        words[at] = cues[rng.below(cues.len())].clone();
    }
    words.join(" ")
}

fn row(id: String, text: String, vector: Option<usize>, schema: &LabelSchema) -> LabeledRow {
    match vector {
        Some(c) => LabeledRow {
            id,
            text,
            label_a: Some(schema.positive()),
            label_b: Some(schema.parent(c)),
            label_c: Some(c),
        },
        None => LabeledRow {
            id,
            text,
            label_a: Some(1 - schema.positive()),
            label_b: None,
            label_c: None,
        },
    }
}

/// Vector class whose cues represent `class` of `subtask`.
fn representative(subtask: Subtask, class: usize, schema: &LabelSchema) -> Option<usize> {
    match subtask {
        Subtask::A => (class == schema.positive()).then_some(0),
        Subtask::B => schema.children(class).first().copied(),
        Subtask::C => Some(class),
    }
}

/// `n` rows cycling through the classes of `subtask`; every row carries a
/// cue that identifies its class exactly.
pub fn separable_rows(n: usize, subtask: Subtask, seed: u64) -> Vec<LabeledRow> {
    let schema = LabelSchema::default();
    let mut rng = SeedRng::new(seed).fork_named("separable");
    (0..n)
        .map(|i| {
            let class = i % subtask.arity();
            let vector = representative(subtask, class, &schema);
            let cues = match (subtask, vector) {
                (_, None) => neutral_cues().to_vec(),
                (Subtask::B, Some(_)) => schema.children(class).iter().flat_map(|&c| cue_words(c)).collect(),
                (_, Some(c)) => cue_words(c).to_vec(),
            };
            let text = sentence(&mut rng, 8, &cues, 0.25, true);
            row(format!("s{i:05}"), text, vector, &schema)
        })
        .collect()
}

/// Binary rows with a `minority_share` positive rate. Positive rows show a
/// cue word at each position with probability `cue_prob`, and may show none
/// at all, so they overlap with the filler-only negatives.
pub fn imbalanced_binary_rows(n: usize, minority_share: f64, cue_prob: f64, seed: u64) -> Vec<LabeledRow> {
    let schema = LabelSchema::default();
    let root = SeedRng::new(seed);
    let mut pick = root.fork_named("labels");
    let mut text_rng = root.fork_named("text");
    let n_pos = (n as f64 * minority_share).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    pick.shuffle(&mut labels);
    labels
        .iter()
        .enumerate()
        .map(|(i, &pos)| {
            let c = text_rng.below(Subtask::C.arity());
            let (cues, p) = if pos { (cue_words(c).to_vec(), cue_prob) } else { (Vec::new(), 0.0) };
            let text = sentence(&mut text_rng, 8, &cues, p, false);
            row(format!("m{i:05}"), text, pos.then_some(c), &schema)
        })
        .collect()
}

/// Hierarchically labeled rows: a `positive_share` of rows is positive, with
/// vector classes drawn uniformly; `cue_prob` controls per-token signal.
pub fn hierarchical_rows(n: usize, positive_share: f64, cue_prob: f64, seed: u64) -> Vec<LabeledRow> {
    let schema = LabelSchema::default();
    let mut rng = SeedRng::new(seed).fork_named("hierarchical");
    (0..n)
        .map(|i| {
            let vector = (rng.uniform() < positive_share).then(|| rng.below(Subtask::C.arity()));
            let cues = vector.map_or_else(|| neutral_cues().to_vec(), |c| cue_words(c).to_vec());
            let text = sentence(&mut rng, 10, &cues, cue_prob, true);
            row(format!("h{i:05}"), text, vector, &schema)
        })
        .collect()
}

/// Unlabeled documents of two to `max_sentences` sentences. Each document
/// keeps to one topic, so its sentences share cue words with the labeled
/// rows.
pub fn sentence_corpus(n_docs: usize, max_sentences: usize, seed: u64) -> Vec<String> {
    let mut rng = SeedRng::new(seed).fork_named("corpus");
    (0..n_docs)
        .map(|_| {
            let topic = rng.below(Subtask::C.arity() + 1);
            let cues = if topic == Subtask::C.arity() {
                neutral_cues().to_vec()
            } else {
                cue_words(topic).to_vec()
            };
            let sentences = 2 + rng.below(max_sentences.max(2) - 1);
            (0..sentences)
                .map(|_| {
                    let len = 6 + rng.below(6);
                    format!("{}.", sentence(&mut rng, len, &cues, 0.3, true))
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_vocab, encode_rows, Split};

    #[test]
    fn rows_satisfy_the_hierarchy() {
        let schema = LabelSchema::default();
        for rows in [
            separable_rows(44, Subtask::C, 1),
            separable_rows(8, Subtask::B, 1),
            imbalanced_binary_rows(100, 0.1, 0.3, 2),
            hierarchical_rows(100, 0.5, 0.3, 3),
        ] {
            let texts: Vec<&str> = rows.iter().map(|r| r.text.as_str()).collect();
            let (vocab, _) = build_vocab(&texts, 500, 1).unwrap();
            encode_rows(&rows, &vocab, 16, Split::Train, &schema).unwrap();
        }
    }

    #[test]
    fn imbalance_and_determinism() {
        let rows = imbalanced_binary_rows(200, 0.1, 0.3, 5);
        assert_eq!(rows.iter().filter(|r| r.label_a == Some(1)).count(), 20);
        assert_eq!(rows, imbalanced_binary_rows(200, 0.1, 0.3, 5));
        assert_ne!(rows, imbalanced_binary_rows(200, 0.1, 0.3, 6));
    }

    #[test]
    fn corpus_documents_have_multiple_sentences() {
        for d in sentence_corpus(50, 5, 0) {
            assert!(crate::adaptation::split_sentences(&d).len() >= 2);
        }
    }
}
