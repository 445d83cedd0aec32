//! Batch command-line frontend. Every command reads a resolved
//! configuration, writes its outputs under one directory, and finishes with
//! `resolved_config.cfg` and `manifest.json`.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::adaptation::{self, PretrainCorpus};
use crate::ensemble::{train_ensemble, Backbone, Ensemble};
use crate::error::{Error, Result};
use crate::eval::{emit_report, label_distribution, read_report, write_distribution_csv, EvalReport, RunMeta};
use crate::model::{Container, Encoder, Stage};
use crate::text::{
    build_vocab, encode_rows, read_corpus, read_rows, split_dataset, write_rows, Dataset, LabelSchema, Split,
    TokenizedExample, Vocab,
};
use crate::training::{sweep, train_encoder};

pub use config::{RunConfig, DATA_ROOT_ENV};

pub const CONFIG_SNAPSHOT: &str = "resolved_config.cfg";
pub const MANIFEST: &str = "manifest.json";
pub const PRETRAIN_CACHE: &str = "pretrain_cache.jsonl";

#[derive(Debug, Parser)]
#[command(name = "hiertext", version, about = "Hierarchical text classification with task-adaptive pretraining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, split and tokenize a labeled file; optionally cache a pretraining corpus.
    PrepareData(CommonArgs),
    /// Masked-token and next-sentence training of an encoder body.
    Pretrain(CommonArgs),
    /// Fine-tune an encoder classifier on one subtask.
    Train(CommonArgs),
    /// Train a fusion head over three frozen encoders.
    EnsembleTrain(CommonArgs),
    /// Score a checkpoint and emit reports.
    Eval(CommonArgs),
    /// Grid search over learning rate, epochs and batch size.
    Sweep(CommonArgs),
    /// Re-render and summarize existing reports.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = ["a", "b", "c"])]
    pub subtask: Option<String>,
    /// Concurrent sweep runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Retrain on train+dev and keep the last epoch.
    #[arg(long)]
    pub merge_dev: bool,
    #[arg(long, value_enum)]
    pub class_weights: Option<Toggle>,
    /// Checkpoint to start from.
    #[arg(long)]
    pub init: Option<String>,
    /// Override any configuration key, e.g. `--set model.hidden=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    PrepareData,
    Pretrain,
    Train,
    EnsembleTrain,
    Eval,
    Sweep,
    Report,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::PrepareData => "prepare-data",
            CommandKind::Pretrain => "pretrain",
            CommandKind::Train => "train",
            CommandKind::EnsembleTrain => "ensemble-train",
            CommandKind::Eval => "eval",
            CommandKind::Sweep => "sweep",
            CommandKind::Report => "report",
        }
    }
}

/// A fully specified invocation.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub command: CommandKind,
    pub config: Option<PathBuf>,
    /// Applied in order after the file.
    pub overrides: Vec<(String, String)>,
    pub out: PathBuf,
    pub jobs: usize,
}

impl RunSpec {
    pub fn from_cli(cli: Cli) -> Result<Self> {
        let (command, a) = match cli.command {
            Command::PrepareData(a) => (CommandKind::PrepareData, a),
            Command::Pretrain(a) => (CommandKind::Pretrain, a),
            Command::Train(a) => (CommandKind::Train, a),
            Command::EnsembleTrain(a) => (CommandKind::EnsembleTrain, a),
            Command::Eval(a) => (CommandKind::Eval, a),
            Command::Sweep(a) => (CommandKind::Sweep, a),
            Command::Report(a) => (CommandKind::Report, a),
        };
        let mut overrides = Vec::new();
        for s in &a.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut flag = |k: &str, v: String| overrides.push((k.to_string(), v));
        if let Some(s) = a.seed {
            flag("seed", s.to_string());
        }
        if let Some(s) = a.subtask {
            flag("subtask", s);
        }
        if a.merge_dev {
            flag("merge_dev", "on".into());
        }
        if let Some(t) = a.class_weights {
            flag("class_weights", if t == Toggle::On { "on" } else { "off" }.into());
        }
        if let Some(i) = a.init {
            flag("init", i);
        }
        Ok(Self {
            command,
            config: a.config,
            overrides,
            out: a.out,
            jobs: a.jobs,
        })
    }
}

/// What a finished command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out: PathBuf,
    /// File names relative to `out`.
    pub artifacts: Vec<String>,
}

/// Collects outputs and provenance for `manifest.json`.
struct Manifest {
    out: PathBuf,
    artifacts: Vec<String>,
    provenance: Vec<Value>,
    extra: BTreeMap<String, Value>,
}

impl Manifest {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn add(&mut self, name: impl Into<String>) {
        self.artifacts.push(name.into());
    }

    fn checkpoint(&mut self, role: &str, source: &str, e: &Encoder) {
        self.provenance.push(json!({
            "role": role,
            "checkpoint": source,
            "digest": e.digest(),
            "stage": e.provenance.stage.as_str(),
            "seed": e.provenance.seed,
            "epoch": e.provenance.epoch,
            "parent": e.provenance.parent,
        }));
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Execute one command end to end.
pub fn run(spec: &RunSpec) -> Result<RunSummary> {
    let cfg = RunConfig::resolve(spec.config.as_deref(), &spec.overrides)?;
    std::fs::create_dir_all(&spec.out).map_err(|e| Error::io(&spec.out, e))?;
    let snapshot = spec.out.join(CONFIG_SNAPSHOT);
    std::fs::write(&snapshot, cfg.snapshot()).map_err(|e| Error::io(&snapshot, e))?;
    let mut m = Manifest {
        out: spec.out.clone(),
        artifacts: vec![CONFIG_SNAPSHOT.to_string()],
        provenance: Vec::new(),
        extra: BTreeMap::new(),
    };
    log::info!("{} -> {}", spec.command.as_str(), spec.out.display());
    match spec.command {
        CommandKind::PrepareData => prepare_data(&cfg, &mut m)?,
        CommandKind::Pretrain => pretrain(&cfg, &mut m)?,
        CommandKind::Train => train(&cfg, &mut m)?,
        CommandKind::EnsembleTrain => ensemble_train(&cfg, &mut m)?,
        CommandKind::Eval => eval(&cfg, &mut m)?,
        CommandKind::Sweep => run_sweep(&cfg, spec.jobs, &mut m)?,
        CommandKind::Report => report(&cfg, &mut m)?,
    }
    let mut artifacts = serde_json::Map::new();
    for a in &m.artifacts {
        artifacts.insert(a.clone(), Value::String(sha256_file(&m.path(a))?));
    }
    let mut doc = json!({
        "command": spec.command.as_str(),
        "seed": cfg.seed(),
        "config": CONFIG_SNAPSHOT,
        "artifacts": artifacts,
        "provenance": m.provenance,
    });
    for (k, v) in std::mem::take(&mut m.extra) {
        doc[k] = v;
    }
    let path = m.path(MANIFEST);
    let mut body = serde_json::to_string_pretty(&doc).map_err(|e| Error::Internal(e.to_string()))?;
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    let mut artifacts = m.artifacts;
    artifacts.push(MANIFEST.to_string());
    Ok(RunSummary { out: m.out, artifacts })
}

/// Parse `args` (including the program name), run, and map the outcome to
/// an exit status: 0 success, 1 failure, 2 usage error. Failures print one
/// `error[category]: message` line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match RunSpec::from_cli(cli).and_then(|s| run(&s)) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn schema_from(cfg: &RunConfig) -> Result<LabelSchema> {
    match cfg.data_path("data.schema") {
        Some(p) => LabelSchema::load(&p),
        None => Ok(LabelSchema::default()),
    }
}

fn prepare_data(cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    let schema = schema_from(cfg)?;
    let rows = read_rows(&cfg.require_data_path("data.labeled")?, &schema)?;
    let split = split_dataset(&rows, cfg.split_ratios(), cfg.seed(), cfg.subtask())?;
    let corpus = cfg.data_path("data.corpus").map(|p| read_corpus(&p)).transpose()?;

    let mut texts: Vec<&str> = split.train.iter().map(|r| r.text.as_str()).collect();
    if let Some(c) = &corpus {
        texts.extend(c.iter().map(String::as_str));
    }
    let (vocab, stats) = build_vocab(&texts, cfg.usize("vocab.max_size"), cfg.usize("vocab.min_freq"))?;
    log::info!("vocabulary: {} entries, {:.1}% coverage", vocab.len(), 100.0 * stats.coverage);

    for (name, part) in [("train.csv", &split.train), ("dev.csv", &split.dev), ("test.csv", &split.test)] {
        write_rows(&m.path(name), part, &schema)?;
        m.add(name);
    }
    vocab.save(&m.path("vocab.txt"))?;
    m.add("vocab.txt");
    schema.save(&m.path("schema.txt"))?;
    m.add("schema.txt");

    let max_len = cfg.usize("model.max_len");
    let all = encode_rows(&rows, &vocab, max_len, Split::Train, &schema)?;
    write_distribution_csv(&label_distribution(&all, &schema), &m.path("distribution.csv"))?;
    m.add("distribution.csv");

    m.extra.insert(
        "splits".into(),
        json!({"train": split.train.len(), "dev": split.dev.len(), "test": split.test.len(), "warnings": split.warnings}),
    );
    if let Some(docs) = corpus {
        let pc = PretrainCorpus::build(&docs, &vocab, max_len, &cfg.pretrain_config()?)?;
        pc.save_cache(&m.path(PRETRAIN_CACHE))?;
        m.add(PRETRAIN_CACHE);
        m.extra.insert("pretrain_corpus".into(), json!(adaptation::corpus_summary(&pc)));
    }
    Ok(())
}

struct Prepared {
    dir: PathBuf,
    schema: LabelSchema,
    vocab: Vocab,
}

impl Prepared {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.require_data_path("data.prepared")?;
        Ok(Self {
            schema: LabelSchema::load(&dir.join("schema.txt"))?,
            vocab: Vocab::load(&dir.join("vocab.txt"))?,
            dir,
        })
    }

    fn split(&self, split: Split, max_len: usize) -> Result<Dataset> {
        let rows = read_rows(&self.dir.join(format!("{split}.csv")), &self.schema)?;
        encode_rows(&rows, &self.vocab, max_len, split, &self.schema)
    }

    fn check_vocab(&self, e: &Encoder, source: &str) -> Result<()> {
        if e.config.vocab_size != self.vocab.len() {
            return Err(Error::Config(format!(
                "{source} expects a {}-token vocabulary, the prepared data has {}",
                e.config.vocab_size,
                self.vocab.len()
            )));
        }
        Ok(())
    }
}

fn load_encoder(source: &str) -> Result<Encoder> {
    Encoder::load(Path::new(source))
}

fn pretrain(cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    let prepared = Prepared::load(cfg)?;
    let pcfg = cfg.pretrain_config()?;
    let model = match cfg.text("init") {
        Some(src) => {
            let e = load_encoder(src)?;
            prepared.check_vocab(&e, src)?;
            m.checkpoint("init", src, &e);
            e
        }
        None => {
            let e = Encoder::init(cfg.encoder_config(prepared.vocab.len())?, cfg.seed())?;
            m.checkpoint("init", "", &e);
            e
        }
    };
    let cache = prepared.dir.join(PRETRAIN_CACHE);
    let corpus = if let Some(p) = cfg.data_path("data.corpus") {
        let pc = PretrainCorpus::build(&read_corpus(&p)?, &prepared.vocab, model.config.max_len, &pcfg)?;
        pc.save_cache(&m.path(PRETRAIN_CACHE))?;
        m.add(PRETRAIN_CACHE);
        pc
    } else if cache.exists() {
        PretrainCorpus::load_cache(&cache)?
    } else {
        return Err(Error::Config(
            "no pretraining corpus: set `data.corpus` or prepare data with one".into(),
        ));
    };
    let outcome = adaptation::pretrain(model, &corpus, &pcfg)?;
    outcome.encoder.save(&m.path("adapted.ckpt"))?;
    m.add("adapted.ckpt");
    outcome.write_log_csv(&m.path("pretrain_log.csv"))?;
    m.add("pretrain_log.csv");
    m.checkpoint("output", "adapted.ckpt", &outcome.encoder);
    Ok(())
}

/// The model a classification run starts from: a fresh encoder, or the
/// `init` checkpoint with a head sized for the subtask.
fn starting_encoder(cfg: &RunConfig, prepared: &Prepared, m: &mut Manifest) -> Result<Encoder> {
    let subtask = cfg.subtask();
    match cfg.text("init") {
        Some(src) => {
            let e = load_encoder(src)?;
            prepared.check_vocab(&e, src)?;
            m.checkpoint("init", src, &e);
            if e.provenance.stage == Stage::TaskAdapted {
                adaptation::warm_start(&e, subtask, cfg.seed())
            } else {
                let mut e = e;
                e.strip_pretrain_heads();
                if e.config.head_classes != subtask.arity() {
                    e.replace_head(subtask.arity(), cfg.seed())?;
                }
                Ok(e)
            }
        }
        None => Encoder::init(cfg.encoder_config(prepared.vocab.len())?, cfg.seed()),
    }
}

fn train(cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    let prepared = Prepared::load(cfg)?;
    let tcfg = cfg.train_config()?;
    let mut model = starting_encoder(cfg, &prepared, m)?;
    let max_len = model.config.max_len;
    let train = prepared.split(Split::Train, max_len)?;
    let dev = prepared.split(Split::Dev, max_len)?;
    let history = train_encoder(&mut model, train.examples(), dev.examples(), cfg.subtask(), &tcfg)?;
    model.save(&m.path("model.ckpt"))?;
    m.add("model.ckpt");
    history.write_csv(&m.path("history.csv"))?;
    m.add("history.csv");
    m.checkpoint("output", "model.ckpt", &model);
    m.extra.insert("kept_epoch".into(), json!(history.kept_epoch));
    Ok(())
}

fn ensemble_train(cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    let prepared = Prepared::load(cfg)?;
    let tcfg = cfg.train_config()?;
    let list = cfg
        .text("ensemble.backbones")
        .ok_or_else(|| Error::Config("key `ensemble.backbones` must be set for this command".into()))?;
    let mut backbones = Vec::new();
    for src in list.split(',').map(str::trim) {
        let e = load_encoder(src)?;
        prepared.check_vocab(&e, src)?;
        m.checkpoint("backbone", src, &e);
        let abs = std::fs::canonicalize(src).map_err(|err| Error::io(src, err))?;
        backbones.push(Backbone {
            encoder: e,
            source: Some(abs),
        });
    }
    let max_len = backbones.iter().map(|b| b.encoder.config.max_len).min().unwrap_or(0);
    let train = prepared.split(Split::Train, max_len)?;
    let dev = prepared.split(Split::Dev, max_len)?;
    let width = Some(cfg.usize("ensemble.width")).filter(|&w| w > 0);
    let (ens, history) = train_ensemble(backbones, train.examples(), dev.examples(), cfg.subtask(), width, &tcfg)?;
    ens.save(&m.path("ensemble.ckpt"))?;
    m.add("ensemble.ckpt");
    history.write_csv(&m.path("history.csv"))?;
    m.add("history.csv");
    Ok(())
}

enum Scorer {
    Single(Encoder),
    Fused(Ensemble),
}

impl Scorer {
    fn load(path: &Path) -> Result<Self> {
        let kind = Container::load(path)?.meta.get("kind").cloned().unwrap_or_default();
        match kind.as_str() {
            "ensemble" => Ok(Scorer::Fused(Ensemble::load(path)?)),
            _ => Ok(Scorer::Single(Encoder::load(path)?)),
        }
    }

    fn classes(&self) -> usize {
        match self {
            Scorer::Single(e) => e.config.head_classes,
            Scorer::Fused(e) => e.classes,
        }
    }

    fn max_len(&self) -> usize {
        match self {
            Scorer::Single(e) => e.config.max_len,
            Scorer::Fused(e) => e.backbones.iter().map(|b| b.encoder.config.max_len).min().unwrap_or(0),
        }
    }

    fn predict(&self, examples: &[&TokenizedExample]) -> Result<Vec<usize>> {
        match self {
            Scorer::Single(e) => e.predict(examples),
            Scorer::Fused(e) => e.predict_examples(examples),
        }
    }
}

fn eval(cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    let prepared = Prepared::load(cfg)?;
    let subtask = cfg.subtask();
    let src = cfg
        .text("eval.checkpoint")
        .or(cfg.text("init"))
        .ok_or_else(|| Error::Config("key `eval.checkpoint` must be set for this command".into()))?;
    let scorer = Scorer::load(Path::new(src))?;
    if scorer.classes() != subtask.arity() {
        return Err(Error::Config(format!(
            "checkpoint has {} classes but subtask {subtask} has {}",
            scorer.classes(),
            subtask.arity()
        )));
    }
    let split = match cfg.raw("eval.split") {
        "train" => Split::Train,
        "dev" => Split::Dev,
        "test" => Split::Test,
        other => return Err(Error::Config(format!("key `eval.split` expects train, dev or test, got `{other}`"))),
    };
    let data = prepared.split(split, scorer.max_len())?;
    let labeled = data.labeled(subtask);
    if labeled.is_empty() {
        return Err(Error::Input(format!("the {split} split has no labels for subtask {subtask}")));
    }
    let golds: Vec<usize> = labeled.iter().filter_map(|e| e.label(subtask)).collect();
    let preds = scorer.predict(&labeled)?;
    let meta = RunMeta {
        config: cfg.snapshot_map(),
        seed: cfg.seed(),
        checkpoint: Some(Container::load(Path::new(src))?.digest()),
    };
    let report = EvalReport::from_predictions(subtask, &preds, &golds, prepared.schema.labels(subtask), meta)?;
    for p in emit_report(&report, &m.out, &cfg.formats())? {
        m.add(p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string());
    }
    write_distribution_csv(&label_distribution(&data, &prepared.schema), &m.path("distribution.csv"))?;
    m.add("distribution.csv");
    if let Scorer::Single(e) = &scorer {
        m.checkpoint("evaluated", src, e);
    }
    m.extra.insert("macro_f1".into(), json!(report.macro_f1));
    Ok(())
}

fn run_sweep(cfg: &RunConfig, jobs: usize, m: &mut Manifest) -> Result<()> {
    let grid = cfg.sweep_grid();
    let base = cfg.train_config()?;
    let configs = grid.configs(&base);
    let runs: Vec<Value> = configs
        .iter()
        .enumerate()
        .flat_map(|(id, c)| {
            grid.seeds.iter().map(move |s| {
                json!({"config_id": id, "learning_rate": c.learning_rate, "epochs": c.epochs, "batch_size": c.batch_size, "seed": s})
            })
        })
        .collect();
    m.extra.insert("runs".into(), Value::Array(runs));
    if cfg.bool("sweep.dry_run") {
        return Ok(());
    }
    if base.merge_dev {
        return Err(Error::Config("a sweep selects on dev; `merge_dev` must be off".into()));
    }
    let prepared = Prepared::load(cfg)?;
    let subtask = cfg.subtask();
    let mut scratch = Manifest {
        out: m.out.clone(),
        artifacts: Vec::new(),
        provenance: Vec::new(),
        extra: BTreeMap::new(),
    };
    let start = starting_encoder(cfg, &prepared, &mut scratch)?;
    m.provenance.extend(scratch.provenance);
    let fresh = cfg.text("init").is_none();
    let train = prepared.split(Split::Train, start.config.max_len)?;
    let dev = prepared.split(Split::Dev, start.config.max_len)?;
    let report = sweep(&grid, &base, jobs, |c| {
        let mut model = if fresh {
            Encoder::init(start.config.clone(), c.seed)?
        } else {
            start.clone()
        };
        let h = train_encoder(&mut model, train.examples(), dev.examples(), subtask, c)?;
        h.best_dev_macro_f1()
            .ok_or_else(|| Error::Internal("sweep run produced no dev score".into()))
    })?;
    report.write_csv(&m.path("sweep_results.csv"))?;
    m.add("sweep_results.csv");
    if let Some(best) = report.ranking.first() {
        m.extra.insert(
            "best".into(),
            json!({"config_id": best.config_id, "mean_dev_macro_f1": best.mean_dev_macro_f1,
                   "learning_rate": best.config.learning_rate, "epochs": best.config.epochs,
                   "batch_size": best.config.batch_size}),
        );
    }
    Ok(())
}

fn report(cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    let list = cfg
        .text("report.inputs")
        .ok_or_else(|| Error::Config("key `report.inputs` must be set for this command".into()))?;
    let mut summary = String::from("input,subtask,examples,macro_precision,macro_recall,macro_f1,accuracy\n");
    for (i, src) in list.split(',').map(str::trim).enumerate() {
        let mut path = PathBuf::from(src);
        if path.is_dir() {
            path = path.join("report.json");
        }
        let r = read_report(&path)?;
        let dir = format!("{i}");
        for p in emit_report(&r, &m.path(&dir), &cfg.formats())? {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            m.add(format!("{dir}/{name}"));
        }
        summary.push_str(&format!(
            "{src},{},{},{},{},{},{}\n",
            r.subtask, r.examples, r.macro_precision, r.macro_recall, r.macro_f1, r.accuracy
        ));
    }
    let path = m.path("summary.csv");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    m.add("summary.csv");
    Ok(())
}

/// Convenience for library callers: build a spec without going through
/// argument parsing.
pub fn spec(command: CommandKind, out: impl Into<PathBuf>, overrides: &[(&str, &str)]) -> RunSpec {
    RunSpec {
        command,
        config: None,
        overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        out: out.into(),
        jobs: 1,
    }
}
