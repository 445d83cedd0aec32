//! Tokenization, label taxonomy, dataset ingestion and splitting.

pub mod dataset;
pub mod schema;
pub mod split;
pub mod vocab;

pub use dataset::{
    encode, encode_row, encode_rows, load_dataset, read_corpus, read_rows, write_rows, ClassCounts, Dataset,
    LabeledRow, Split, TokenizedExample, DEFAULT_MAX_LEN,
};
pub use schema::{LabelSchema, Subtask};
pub use split::{split_dataset, SplitOutcome, DEFAULT_RATIOS};
pub use vocab::{build_vocab, tokenize, Vocab, VocabStats, CLS, MASK, NUM_RESERVED, PAD, SEP, UNK};
