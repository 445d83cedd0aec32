//! Stratified splitting, vocabulary building and label distributions for a
//! three-level label hierarchy.

use hiertext::eval::label_distribution;
use hiertext::synth;
use hiertext::text::{build_vocab, encode_rows, split_dataset, LabelSchema, Split, Subtask, DEFAULT_RATIOS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::default();
    let rows = synth::hierarchical_rows(600, 0.3, 0.3, 4);
    let split = split_dataset(&rows, DEFAULT_RATIOS, 4, Subtask::C)?;
    println!("train {} / dev {} / test {}", split.train.len(), split.dev.len(), split.test.len());

    let texts: Vec<&str> = split.train.iter().map(|r| r.text.as_str()).collect();
    let (vocab, stats) = build_vocab(&texts, 2000, 2)?;
    println!("vocabulary {} ids, {:.1}% token coverage", vocab.len(), 100.0 * stats.coverage);

    let train = encode_rows(&split.train, &vocab, 24, Split::Train, &schema)?;
    for d in label_distribution(&train, &schema) {
        println!("{:?}: counts {:?}, imbalance {:.2}", d.subtask, d.counts, d.imbalance_ratio);
    }
    Ok(())
}
