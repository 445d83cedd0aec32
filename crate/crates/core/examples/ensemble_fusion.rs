//! Three frozen encoders of different widths feeding a trained fusion head.

use hiertext::ensemble::{train_ensemble, Backbone};
use hiertext::model::{Encoder, EncoderConfig};
use hiertext::synth;
use hiertext::text::{build_vocab, encode_rows, LabelSchema, Split, Subtask};
use hiertext::training::{train_encoder, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::default();
    let subtask = Subtask::B;
    let train_rows = synth::hierarchical_rows(300, 1.0, 0.3, 5);
    let dev_rows = synth::hierarchical_rows(100, 1.0, 0.3, 6);
    let texts: Vec<&str> = train_rows.iter().map(|r| r.text.as_str()).collect();
    let (vocab, _) = build_vocab(&texts, 1000, 1)?;
    let train = encode_rows(&train_rows, &vocab, 16, Split::Train, &schema)?;
    let dev = encode_rows(&dev_rows, &vocab, 16, Split::Dev, &schema)?;

    let cfg = TrainConfig {
        learning_rate: 2e-3,
        epochs: 4,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut backbones = Vec::new();
    for (seed, hidden) in [(1, 16), (2, 24), (3, 32)] {
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            hidden,
            layers: 1,
            heads: 2,
            ffn: 2 * hidden,
            max_len: 16,
            ..EncoderConfig::default()
        }
        .for_subtask(subtask);
        let mut enc = Encoder::init(config, seed)?;
        let h = train_encoder(&mut enc, train.examples(), dev.examples(), subtask, &TrainConfig { seed, ..cfg.clone() })?;
        println!("backbone hidden={hidden}: dev macro-F1 {:.3}", h.best_dev_macro_f1().unwrap_or(0.0));
        backbones.push(Backbone::from(enc));
    }

    let fusion_cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 10,
        ..cfg
    };
    let (ensemble, history) = train_ensemble(backbones, train.examples(), dev.examples(), subtask, None, &fusion_cfg)?;
    println!(
        "fusion over {} features: dev macro-F1 {:.3}",
        ensemble.input_width(),
        history.best_dev_macro_f1().unwrap_or(0.0)
    );
    Ok(())
}
