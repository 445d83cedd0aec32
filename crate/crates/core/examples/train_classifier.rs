//! Fine-tune a small encoder on the category level and watch dev macro-F1.

use hiertext::model::{Encoder, EncoderConfig};
use hiertext::synth;
use hiertext::text::{build_vocab, encode_rows, LabelSchema, Split, Subtask};
use hiertext::training::{train_encoder, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::default();
    let subtask = Subtask::B;
    let train_rows = synth::separable_rows(160, subtask, 1);
    let dev_rows = synth::separable_rows(40, subtask, 2);
    let texts: Vec<&str> = train_rows.iter().map(|r| r.text.as_str()).collect();
    let (vocab, _) = build_vocab(&texts, 1000, 1)?;
    let train = encode_rows(&train_rows, &vocab, 16, Split::Train, &schema)?;
    let dev = encode_rows(&dev_rows, &vocab, 16, Split::Dev, &schema)?;

    let config = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: 32,
        layers: 1,
        heads: 2,
        ffn: 64,
        max_len: 16,
        ..EncoderConfig::default()
    }
    .for_subtask(subtask);
    let mut model = Encoder::init(config, 1)?;
    println!("{} parameters", model.param_count());

    let cfg = TrainConfig {
        learning_rate: 2e-3,
        epochs: 12,
        batch_size: 16,
        step_size: 6,
        ..TrainConfig::default()
    };
    let history = train_encoder(&mut model, train.examples(), dev.examples(), subtask, &cfg)?;
    for r in &history.records {
        println!("epoch {:>2}  lr {:.1e}  loss {:.4}  dev macro-F1 {:.3}", r.epoch, r.lr, r.train_loss, r.dev_macro_f1.unwrap_or(f64::NAN));
    }
    println!("kept epoch {}", history.kept_epoch);
    Ok(())
}
