//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adaptation::PretrainConfig;
use crate::error::{Error, Result};
use crate::eval::ReportFormat;
use crate::model::EncoderConfig;
use crate::text::Subtask;
use crate::training::{SweepGrid, TrainConfig};

/// Environment variable naming the root that relative `data.*` paths
/// resolve against.
pub const DATA_ROOT_ENV: &str = "HIERTEXT_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Float,
    UInt,
    Bool,
    Text,
    Subtask,
    FloatList,
    UIntList,
    Formats,
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: &'static str,
    doc: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, doc: &'static str) -> Key {
    Key {
        name,
        kind,
        default,
        doc,
    }
}

const KEYS: &[Key] = &[
    key("seed", Kind::UInt, "0", "global seed; every random stream derives from it"),
    key("subtask", Kind::Subtask, "a", "a, b or c"),
    key("init", Kind::Text, "", "checkpoint to start from"),
    key("lr", Kind::Float, "2e-5", "fine-tuning learning rate"),
    key("epochs", Kind::UInt, "5", "fine-tuning epochs"),
    key("batch_size", Kind::UInt, "32", "fine-tuning batch size"),
    key("dropout", Kind::Float, "0.5", "dropout in front of the classification layers"),
    key("step_size", Kind::UInt, "3", "epochs between learning-rate decays"),
    key("gamma", Kind::Float, "0.5", "learning-rate decay factor"),
    key("weight_decay", Kind::Float, "0.01", "decoupled weight decay"),
    key("class_weights", Kind::Bool, "on", "inverse-frequency class weights"),
    key("merge_dev", Kind::Bool, "off", "train on train+dev and keep the last epoch"),
    key("select_best", Kind::Bool, "on", "keep the epoch with the best dev macro-F1"),
    key("data.labeled", Kind::Text, "", "labeled CSV or JSON-lines file"),
    key("data.corpus", Kind::Text, "", "unlabeled corpus, one document per line"),
    key("data.schema", Kind::Text, "", "label schema file; empty means the built-in one"),
    key("data.prepared", Kind::Text, "", "directory written by prepare-data"),
    key("split.train", Kind::Float, "0.7", "train share"),
    key("split.dev", Kind::Float, "0.1", "dev share"),
    key("split.test", Kind::Float, "0.2", "test share"),
    key("vocab.max_size", Kind::UInt, "5000", "vocabulary size including reserved tokens"),
    key("vocab.min_freq", Kind::UInt, "1", "minimum token count"),
    key("model.hidden", Kind::UInt, "64", "hidden width"),
    key("model.layers", Kind::UInt, "2", "encoder layers"),
    key("model.heads", Kind::UInt, "4", "attention heads"),
    key("model.ffn", Kind::UInt, "256", "feed-forward width"),
    key("model.max_len", Kind::UInt, "64", "maximum sequence length"),
    key("model.attn_dropout", Kind::Float, "0.1", "attention dropout"),
    key("model.hidden_dropout", Kind::Float, "0.1", "residual-branch dropout"),
    key("model.init_std", Kind::Float, "0.02", "weight init standard deviation"),
    key("pretrain.lr", Kind::Float, "2e-5", "pretraining learning rate"),
    key("pretrain.batch_size", Kind::UInt, "32", "pretraining batch size"),
    key("pretrain.epochs", Kind::UInt, "2", "pretraining epochs"),
    key("pretrain.mask_prob", Kind::Float, "0.15", "masked-token selection rate"),
    key("pretrain.is_next_prob", Kind::Float, "0.5", "share of true successor pairs"),
    key("pretrain.heldout_fraction", Kind::Float, "0.02", "held-out share of pairs"),
    key("pretrain.dynamic_masking", Kind::Bool, "off", "re-mask every epoch"),
    key("ensemble.backbones", Kind::Text, "", "three comma-separated encoder checkpoints"),
    key("ensemble.width", Kind::UInt, "0", "fusion width; 0 means one backbone's hidden size"),
    key("eval.checkpoint", Kind::Text, "", "encoder or ensemble checkpoint to evaluate"),
    key("eval.split", Kind::Text, "test", "train, dev or test"),
    key("eval.formats", Kind::Formats, "json,csv,svg", "report renderings"),
    key("sweep.learning_rates", Kind::FloatList, "2e-5,3e-5,5e-5", "grid axis"),
    key("sweep.epochs", Kind::UIntList, "2,3,5,10,15", "grid axis"),
    key("sweep.batch_sizes", Kind::UIntList, "16,32,48", "grid axis"),
    key("sweep.seeds", Kind::UIntList, "0", "seeds per configuration"),
    key("sweep.dry_run", Kind::Bool, "off", "only enumerate the runs"),
    key("report.inputs", Kind::Text, "", "comma-separated report.json files or run directories"),
];

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

fn unknown_key(name: &str) -> Error {
    let best = KEYS
        .iter()
        .map(|k| (strsim::damerau_levenshtein(name, k.name), k.name))
        .min();
    match best {
        Some((d, suggestion)) if d <= 3 => Error::Config(format!("unknown key `{name}`; did you mean `{suggestion}`?")),
        _ => Error::Config(format!("unknown key `{name}`")),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn parse_list<T: FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn check(k: &Key, value: &str) -> Result<()> {
    let ok = match k.kind {
        Kind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::UInt => value.parse::<u64>().is_ok(),
        Kind::Bool => parse_bool(value).is_some(),
        Kind::Text => true,
        Kind::Subtask => value.parse::<Subtask>().is_ok(),
        Kind::FloatList => parse_list::<f64>(value).is_some_and(|v| !v.is_empty()),
        Kind::UIntList => parse_list::<u64>(value).is_some_and(|v| !v.is_empty()),
        Kind::Formats => parse_formats(value).is_some(),
    };
    if ok {
        Ok(())
    } else {
        let want = match k.kind {
            Kind::Float => "a finite number",
            Kind::UInt => "a non-negative integer",
            Kind::Bool => "on or off",
            Kind::Text => "text",
            Kind::Subtask => "a, b or c",
            Kind::FloatList => "a comma-separated list of numbers",
            Kind::UIntList => "a comma-separated list of integers",
            Kind::Formats => "a comma-separated subset of json, csv, svg",
        };
        Err(Error::Config(format!("key `{}` expects {want}, got `{value}`", k.name)))
    }
}

fn parse_formats(s: &str) -> Option<Vec<ReportFormat>> {
    s.split(',')
        .map(|p| match p.trim() {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            "svg" => Some(ReportFormat::Svg),
            _ => None,
        })
        .collect()
}

/// Every key with its resolved value. Values are kept as written so the
/// snapshot reproduces the run exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }
}

/// Parse `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let k = lookup(name).ok_or_else(|| unknown_key(name))?;
        check(k, value)?;
        self.values.insert(k.name, value.to_string());
        Ok(())
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut seen = std::collections::HashSet::new();
            for (k, v) in parse_pairs(&text)? {
                if !seen.insert(k.clone()) {
                    return Err(Error::Config(format!("key `{k}` is set twice in {}", p.display())));
                }
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// One `key = value` line per key, in documented order.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            s.push_str(&format!("{} = {}\n", k.name, self.values[k.name]));
        }
        s
    }

    pub fn snapshot_map(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    /// Documented keys with their defaults.
    pub fn documentation() -> String {
        KEYS.iter()
            .map(|k| format!("{:<28} {:<16} {}\n", k.name, k.default, k.doc))
            .collect()
    }

    pub fn raw(&self, name: &str) -> &str {
        &self.values[lookup(name).expect("documented key").name]
    }

    fn parsed<T: FromStr>(&self, name: &str) -> T {
        self.raw(name).parse().ok().expect("value checked on insert")
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.parsed(name)
    }

    pub fn usize(&self, name: &str) -> usize {
        self.parsed(name)
    }

    pub fn u64(&self, name: &str) -> u64 {
        self.parsed(name)
    }

    pub fn bool(&self, name: &str) -> bool {
        parse_bool(self.raw(name)).expect("value checked on insert")
    }

    /// A text value, or `None` when empty.
    pub fn text(&self, name: &str) -> Option<&str> {
        Some(self.raw(name)).filter(|s| !s.is_empty())
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn subtask(&self) -> Subtask {
        self.parsed("subtask")
    }

    pub fn formats(&self) -> Vec<ReportFormat> {
        parse_formats(self.raw("eval.formats")).expect("value checked on insert")
    }

    /// A `data.*` path, resolved against the data root when relative.
    pub fn data_path(&self, name: &str) -> Option<PathBuf> {
        self.text(name).map(|p| {
            let p = PathBuf::from(p);
            match std::env::var_os(DATA_ROOT_ENV) {
                Some(root) if p.is_relative() => PathBuf::from(root).join(p),
                _ => p,
            }
        })
    }

    pub fn require_data_path(&self, name: &str) -> Result<PathBuf> {
        self.data_path(name)
            .ok_or_else(|| Error::Config(format!("key `{name}` must be set for this command")))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let c = TrainConfig {
            learning_rate: self.f64("lr"),
            epochs: self.usize("epochs"),
            batch_size: self.usize("batch_size"),
            dropout: self.f64("dropout"),
            step_size: self.usize("step_size"),
            gamma: self.f64("gamma"),
            weight_decay: self.f64("weight_decay"),
            use_class_weights: self.bool("class_weights"),
            merge_dev: self.bool("merge_dev"),
            select_best: self.bool("select_best"),
            seed: self.seed(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn encoder_config(&self, vocab_size: usize) -> Result<EncoderConfig> {
        let c = EncoderConfig {
            vocab_size,
            hidden: self.usize("model.hidden"),
            layers: self.usize("model.layers"),
            heads: self.usize("model.heads"),
            ffn: self.usize("model.ffn"),
            max_len: self.usize("model.max_len"),
            attn_dropout: self.f64("model.attn_dropout"),
            hidden_dropout: self.f64("model.hidden_dropout"),
            classifier_dropout: self.f64("dropout"),
            init_std: self.f64("model.init_std"),
            ..EncoderConfig::default()
        }
        .for_subtask(self.subtask());
        c.validate()?;
        Ok(c)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        let c = PretrainConfig {
            learning_rate: self.f64("pretrain.lr"),
            batch_size: self.usize("pretrain.batch_size"),
            epochs: self.usize("pretrain.epochs"),
            mask_prob: self.f64("pretrain.mask_prob"),
            is_next_prob: self.f64("pretrain.is_next_prob"),
            heldout_fraction: self.f64("pretrain.heldout_fraction"),
            dynamic_masking: self.bool("pretrain.dynamic_masking"),
            weight_decay: self.f64("weight_decay"),
            seed: self.seed(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        fn list<T: FromStr>(c: &RunConfig, k: &str) -> Vec<T> {
            parse_list(c.raw(k)).expect("value checked on insert")
        }
        SweepGrid {
            learning_rates: list(self, "sweep.learning_rates"),
            epochs: list(self, "sweep.epochs"),
            batch_sizes: list(self, "sweep.batch_sizes"),
            seeds: list(self, "sweep.seeds"),
        }
    }

    pub fn split_ratios(&self) -> [f64; 3] {
        [self.f64("split.train"), self.f64("split.dev"), self.f64("split.test")]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, body).unwrap();
        (dir, p)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let (_d, p) = write("");
        let c = RunConfig::resolve(Some(&p), &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train_config().unwrap(), TrainConfig::default());
        assert_eq!(c.pretrain_config().unwrap(), PretrainConfig::default());
        assert_eq!(c.sweep_grid(), SweepGrid::default());
    }

    #[test]
    fn overrides_win() {
        let (_d, p) = write("# base\nlr = 2e-5\n");
        let c = RunConfig::resolve(Some(&p), &[("lr".into(), "5e-5".into())]).unwrap();
        assert_eq!(c.train_config().unwrap().learning_rate, 5e-5);
    }

    #[test]
    fn typo_gets_a_suggestion() {
        let (_d, p) = write("dropuot = 0.3\n");
        let e = RunConfig::resolve(Some(&p), &[]).unwrap_err();
        assert_eq!(e.category(), "config");
        assert!(e.to_string().contains("`dropout`"), "{e}");
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let e = RunConfig::resolve(None, &[("lr".into(), "fast".into())]).unwrap_err();
        assert_eq!(e.category(), "config");
        assert!(e.to_string().contains("`lr`"));
    }

    #[test]
    fn snapshot_round_trips() {
        let c = RunConfig::resolve(None, &[("model.hidden".into(), "32".into()), ("class_weights".into(), "off".into())]).unwrap();
        let (_d, p) = write(&c.snapshot());
        assert_eq!(RunConfig::resolve(Some(&p), &[]).unwrap(), c);
    }
}
