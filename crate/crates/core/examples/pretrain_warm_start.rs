//! Task-adaptive pretraining with masked-token and next-sentence objectives
//! on unlabeled text, then a warm-started fine-tune.

use hiertext::adaptation::{self, PretrainConfig, PretrainCorpus};
use hiertext::model::{Encoder, EncoderConfig};
use hiertext::synth;
use hiertext::text::{build_vocab, encode_rows, LabelSchema, Split, Subtask};
use hiertext::training::{train_encoder, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = synth::sentence_corpus(400, 8, 1);
    let rows = synth::hierarchical_rows(200, 0.5, 0.2, 2);
    let mut texts: Vec<&str> = docs.iter().map(String::as_str).collect();
    texts.extend(rows.iter().map(|r| r.text.as_str()));
    let (vocab, _) = build_vocab(&texts, 2000, 1)?;

    let pcfg = PretrainConfig {
        learning_rate: 1e-3,
        epochs: 2,
        heldout_fraction: 0.05,
        seed: 1,
        ..PretrainConfig::default()
    };
    let corpus = PretrainCorpus::build(&docs, &vocab, 32, &pcfg)?;
    println!("{:?}", adaptation::corpus_summary(&corpus));

    let config = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: 32,
        layers: 1,
        heads: 2,
        ffn: 64,
        max_len: 32,
        ..EncoderConfig::default()
    };
    let out = adaptation::pretrain(Encoder::init(config, 1)?, &corpus, &pcfg)?;
    for r in &out.log {
        println!("epoch {}  held-out mlm {:.4}  nsp {:.4}", r.epoch, r.heldout.mlm, r.heldout.nsp);
    }

    let data = encode_rows(&rows, &vocab, 32, Split::Train, &LabelSchema::default())?;
    let (train, dev) = data.examples().split_at(150);
    let mut model = adaptation::warm_start(&out.encoder, Subtask::A, 1)?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 5,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let history = train_encoder(&mut model, train, dev, Subtask::A, &cfg)?;
    println!("warm start best dev macro-F1 {:.3}", history.best_dev_macro_f1().unwrap_or(0.0));
    println!("provenance {:?}", model.provenance);
    Ok(())
}
