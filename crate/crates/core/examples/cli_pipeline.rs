//! The command pipeline driven in-process: prepare-data, train, eval.

use hiertext::cli::{run, spec, CommandKind};
use hiertext::synth;
use hiertext::text::{write_rows, LabelSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("hiertext-cli-example");
    std::fs::create_dir_all(&root)?;
    let posts = root.join("posts.csv");
    write_rows(&posts, &synth::hierarchical_rows(300, 0.5, 0.3, 1), &LabelSchema::default())?;

    let model = [("model.hidden", "16"), ("model.layers", "1"), ("model.heads", "2"), ("model.ffn", "32"), ("model.max_len", "24")];
    let with = |extra: &[(&'static str, String)]| {
        let mut o: Vec<(&str, String)> = model.iter().map(|(k, v)| (*k, v.to_string())).collect();
        o.extend(extra.iter().cloned());
        o
    };
    let call = |cmd, out: &str, o: Vec<(&str, String)>| {
        let pairs: Vec<(&str, &str)> = o.iter().map(|(k, v)| (*k, v.as_str())).collect();
        run(&spec(cmd, root.join(out), &pairs))
    };

    call(CommandKind::PrepareData, "prep", with(&[("data.labeled", posts.display().to_string())]))?;
    let prep = root.join("prep").display().to_string();
    call(
        CommandKind::Train,
        "train",
        with(&[("data.prepared", prep.clone()), ("lr", "1e-3".into()), ("epochs", "4".into()), ("batch_size", "16".into())]),
    )?;
    let ckpt = root.join("train/model.ckpt").display().to_string();
    call(CommandKind::Eval, "eval", with(&[("data.prepared", prep), ("eval.checkpoint", ckpt)]))?;

    let report = std::fs::read_to_string(root.join("eval/report.csv"))?;
    println!("{report}");
    println!("artifacts under {}", root.display());
    Ok(())
}
