use std::path::{Path, PathBuf};
use std::process::Command;

use hiertext::cli::{run, spec, CommandKind, RunSpec};
use hiertext::synth;
use hiertext::text::{write_rows, LabelSchema};

const SMALL: [(&str, &str); 7] = [
    ("model.hidden", "16"),
    ("model.layers", "1"),
    ("model.heads", "2"),
    ("model.ffn", "32"),
    ("model.max_len", "24"),
    ("lr", "1e-3"),
    ("batch_size", "16"),
];

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let rows = synth::hierarchical_rows(160, 0.5, 0.3, 1);
        write_rows(&dir.path().join("posts.csv"), &rows, &LabelSchema::default()).unwrap();
        std::fs::write(dir.path().join("corpus.txt"), synth::sentence_corpus(80, 5, 2).join("\n")).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn spec(&self, cmd: CommandKind, out: &str, extra: &[(&str, &str)]) -> RunSpec {
        let mut o: Vec<(&str, &str)> = SMALL.to_vec();
        o.extend_from_slice(extra);
        spec(cmd, self.path(out), &o)
    }

    fn prepare(&self) -> String {
        let labeled = self.path("posts.csv").display().to_string();
        let corpus = self.path("corpus.txt").display().to_string();
        run(&self.spec(
            CommandKind::PrepareData,
            "prep",
            &[("data.labeled", &labeled), ("data.corpus", &corpus), ("pretrain.heldout_fraction", "0.1")],
        ))
        .unwrap();
        self.path("prep").display().to_string()
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(&dir.join("manifest.json"))).unwrap()
}

#[test]
fn prepare_data_writes_splits_and_cache() {
    let ws = Workspace::new();
    let before = read(&ws.path("posts.csv"));
    let prep = ws.prepare();
    for f in [
        "train.csv",
        "dev.csv",
        "test.csv",
        "vocab.txt",
        "schema.txt",
        "distribution.csv",
        "pretrain_cache.jsonl",
        "resolved_config.cfg",
        "manifest.json",
    ] {
        assert!(Path::new(&prep).join(f).exists(), "{f}");
    }
    assert_eq!(read(&ws.path("posts.csv")), before);
    let m = manifest(Path::new(&prep));
    assert_eq!(m["splits"]["train"].as_u64().unwrap() + m["splits"]["dev"].as_u64().unwrap() + m["splits"]["test"].as_u64().unwrap(), 160);
}

#[test]
fn train_is_byte_reproducible() {
    let ws = Workspace::new();
    let prep = ws.prepare();
    let o = [("data.prepared", prep.as_str()), ("epochs", "2"), ("seed", "7")];
    run(&ws.spec(CommandKind::Train, "t1", &o)).unwrap();
    run(&ws.spec(CommandKind::Train, "t2", &o)).unwrap();
    for f in ["history.csv", "model.ckpt", "manifest.json", "resolved_config.cfg"] {
        assert_eq!(read(&ws.path("t1").join(f)), read(&ws.path("t2").join(f)), "{f}");
    }
}

#[test]
fn pretrain_then_train_links_provenance() {
    let ws = Workspace::new();
    let prep = ws.prepare();
    run(&ws.spec(CommandKind::Pretrain, "pt", &[("data.prepared", &prep), ("pretrain.lr", "1e-3"), ("pretrain.epochs", "1")])).unwrap();
    let adapted = ws.path("pt/adapted.ckpt").display().to_string();
    run(&ws.spec(
        CommandKind::Train,
        "ft",
        &[("data.prepared", &prep), ("epochs", "1"), ("subtask", "b"), ("init", &adapted)],
    ))
    .unwrap();

    let pt = manifest(&ws.path("pt"));
    let ft = manifest(&ws.path("ft"));
    let pt_out = &pt["provenance"][1];
    assert_eq!(pt_out["stage"], "task-adapted");
    assert_eq!(pt["provenance"][0]["stage"], "random-init");
    assert_eq!(pt_out["parent"], pt["provenance"][0]["digest"]);

    let ft_init = &ft["provenance"][0];
    let ft_out = &ft["provenance"][1];
    assert_eq!(ft_init["digest"], pt_out["digest"]);
    assert_eq!(ft_init["stage"], "task-adapted");
    assert_eq!(ft_out["stage"], "fine-tuned");
    assert!(ws.path("pt/pretrain_log.csv").exists());
}

#[test]
fn sweep_dry_run_enumerates_the_grid() {
    let ws = Workspace::new();
    run(&ws.spec(CommandKind::Sweep, "sw", &[("sweep.dry_run", "on")])).unwrap();
    let m = manifest(&ws.path("sw"));
    let runs = m["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 45);
    assert_eq!(runs[44]["learning_rate"], 5e-5);
}

#[test]
fn small_sweep_writes_results() {
    let ws = Workspace::new();
    let prep = ws.prepare();
    let mut s = ws.spec(
        CommandKind::Sweep,
        "sw",
        &[
            ("data.prepared", &prep),
            ("sweep.learning_rates", "1e-3,3e-3"),
            ("sweep.epochs", "1"),
            ("sweep.batch_sizes", "16"),
        ],
    );
    s.jobs = 2;
    run(&s).unwrap();
    let csv = String::from_utf8(read(&ws.path("sw/sweep_results.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("config_id,learning_rate,epochs,batch_size,seed,dev_macro_f1"));
}

#[test]
fn eval_ensemble_and_report() {
    let ws = Workspace::new();
    let prep = ws.prepare();
    let mut ckpts = Vec::new();
    for seed in ["1", "2", "3"] {
        let out = format!("m{seed}");
        run(&ws.spec(CommandKind::Train, &out, &[("data.prepared", &prep), ("epochs", "1"), ("seed", seed)])).unwrap();
        ckpts.push(ws.path(&out).join("model.ckpt").display().to_string());
    }
    let ev = |out: &str, ckpt: &str| {
        run(&ws.spec(CommandKind::Eval, out, &[("data.prepared", &prep), ("eval.checkpoint", ckpt)])).unwrap();
    };
    ev("e1", &ckpts[0]);
    for f in ["report.json", "report.csv", "confusion.svg", "distribution.csv"] {
        assert!(ws.path("e1").join(f).exists(), "{f}");
    }

    let list = ckpts.join(",");
    run(&ws.spec(CommandKind::EnsembleTrain, "ens", &[("data.prepared", &prep), ("epochs", "2"), ("ensemble.backbones", &list)])).unwrap();
    let ens = ws.path("ens/ensemble.ckpt").display().to_string();
    ev("e2", &ens);

    let inputs = format!("{},{}", ws.path("e1").display(), ws.path("e2").display());
    run(&ws.spec(CommandKind::Report, "rep", &[("report.inputs", &inputs)])).unwrap();
    let summary = String::from_utf8(read(&ws.path("rep/summary.csv"))).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(ws.path("rep/1/confusion.svg").exists());
}

#[test]
fn data_root_resolves_relative_paths() {
    let ws = Workspace::new();
    std::env::set_var(hiertext::cli::DATA_ROOT_ENV, ws.dir.path());
    let r = run(&spec(CommandKind::PrepareData, ws.path("rel"), &[("data.labeled", "posts.csv")]));
    std::env::remove_var(hiertext::cli::DATA_ROOT_ENV);
    r.unwrap();
    assert!(ws.path("rel/train.csv").exists());
}

fn bin(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hiertext"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").display().to_string();

    let (code, _) = bin(&["frobnicate", "--out", &out]);
    assert_eq!(code, 2);

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "dropuot = 0.2\n").unwrap();
    let (code, err) = bin(&["train", "--out", &out, "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]: "), "{err}");
    assert!(err.contains("dropout"));

    let (code, err) = bin(&["train", "--out", &out, "--set", "lr=fast"]);
    assert_eq!(code, 1);
    assert!(err.contains("`lr`"), "{err}");

    let (code, _) = bin(&["sweep", "--out", &out, "--set", "sweep.dry_run=on", "--seed", "3"]);
    assert_eq!(code, 0);
    let snapshot = std::fs::read_to_string(dir.path().join("o/resolved_config.cfg")).unwrap();
    assert!(snapshot.contains("seed = 3\n"));
}
