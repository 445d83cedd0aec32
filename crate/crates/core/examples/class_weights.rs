//! Inverse-frequency class weights on a 9:1 binary task: minority recall
//! with and without weighting.

use hiertext::eval::{confusion_matrix, precision_recall_f1};
use hiertext::model::{Encoder, EncoderConfig};
use hiertext::synth;
use hiertext::text::{build_vocab, encode_rows, LabelSchema, Split, Subtask};
use hiertext::training::{class_weights, label_counts, train_encoder, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::default();
    let rows = synth::imbalanced_binary_rows(400, 0.1, 0.15, 8);
    let test_rows = synth::imbalanced_binary_rows(400, 0.1, 0.15, 9);
    let texts: Vec<&str> = rows.iter().map(|r| r.text.as_str()).collect();
    let (vocab, _) = build_vocab(&texts, 1000, 1)?;
    let train = encode_rows(&rows, &vocab, 12, Split::Train, &schema)?;
    let test = encode_rows(&test_rows, &vocab, 12, Split::Test, &schema)?;

    let counts = label_counts(train.examples().iter().filter_map(|e| e.label_a), 2);
    println!("counts {counts:?} -> weights {:?}", class_weights(&counts)?.values());

    let config = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: 16,
        layers: 1,
        heads: 2,
        ffn: 32,
        max_len: 12,
        ..EncoderConfig::default()
    }
    .for_subtask(Subtask::A);
    let refs: Vec<_> = test.examples().iter().collect();
    let golds: Vec<usize> = test.examples().iter().filter_map(|e| e.label_a).collect();
    let minority = schema.positive();
    for weighted in [false, true] {
        let mut model = Encoder::init(config.clone(), 3)?;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 16,
            step_size: 10,
            use_class_weights: weighted,
            select_best: false,
            seed: 3,
            ..TrainConfig::default()
        };
        train_encoder(&mut model, train.examples(), test.examples(), Subtask::A, &cfg)?;
        let m = precision_recall_f1(&confusion_matrix(&model.predict(&refs)?, &golds, 2)?);
        println!("weighted={weighted:<5}  minority recall {:.3}  macro-F1 {:.3}", m.per_class[minority].recall, m.macro_f1);
    }
    Ok(())
}
