//! Grid search over learning rate and batch size, three seeds each, ranked
//! by mean dev macro-F1.

use hiertext::model::{Encoder, EncoderConfig};
use hiertext::synth;
use hiertext::text::{build_vocab, encode_rows, LabelSchema, Split, Subtask};
use hiertext::training::{sweep, train_encoder, SweepGrid, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::default();
    let train_rows = synth::hierarchical_rows(200, 0.5, 0.2, 1);
    let dev_rows = synth::hierarchical_rows(80, 0.5, 0.2, 2);
    let texts: Vec<&str> = train_rows.iter().map(|r| r.text.as_str()).collect();
    let (vocab, _) = build_vocab(&texts, 1000, 1)?;
    let train = encode_rows(&train_rows, &vocab, 16, Split::Train, &schema)?;
    let dev = encode_rows(&dev_rows, &vocab, 16, Split::Dev, &schema)?;
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: 16,
        layers: 1,
        heads: 2,
        ffn: 32,
        max_len: 16,
        ..EncoderConfig::default()
    }
    .for_subtask(Subtask::A);

    let grid = SweepGrid {
        learning_rates: vec![3e-4, 1e-3, 3e-3],
        epochs: vec![10],
        batch_sizes: vec![16, 32],
        seeds: vec![1, 2, 3],
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = sweep(&grid, &TrainConfig::default(), jobs, |cfg| {
        let mut model = Encoder::init(config.clone(), cfg.seed)?;
        let h = train_encoder(&mut model, train.examples(), dev.examples(), Subtask::A, cfg)?;
        Ok(h.best_dev_macro_f1().unwrap_or(0.0))
    })?;
    for r in &report.ranking {
        println!(
            "config {}: lr {:.0e} batch {:>2} -> mean dev macro-F1 {:.3} over {} runs",
            r.config_id, r.config.learning_rate, r.config.batch_size, r.mean_dev_macro_f1, r.runs
        );
    }
    Ok(())
}
