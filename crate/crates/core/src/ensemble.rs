//! Three frozen encoder backbones feeding a trainable two-layer fusion head.
//!
//! Backbone pooled vectors are concatenated into one row `h` of width
//! `D = 3 · hidden`, then
//!
//! ```text
//! h1     = dropout(relu(h  · W1 + b1))      W1: D × d
//! h_out  = dropout(relu(h1 · W2 + b2))      W2: d × d
//! logits = h_out · Wo + bo                  Wo: d × M
//! ```
//!
//! Backbone features are computed once in inference mode; only the fusion
//! tensors are ever placed on a graph as differentiable leaves.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::encoder::init_tensor;
use crate::model::{Container, Encoder};
use crate::params::{Bound, ParamStore};
use crate::rng::SeedRng;
use crate::tensor::{Graph, Tensor, Var};
use crate::text::{Subtask, TokenizedExample};
use crate::training::{fit, Classifier, RunHistory, TrainConfig};

pub const BACKBONES: usize = 3;

/// A frozen backbone and where it was loaded from.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub encoder: Encoder,
    pub source: Option<PathBuf>,
}

impl From<Encoder> for Backbone {
    fn from(encoder: Encoder) -> Self {
        Self { encoder, source: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub backbones: Vec<Backbone>,
    pub fusion: ParamStore,
    pub classes: usize,
    pub width: usize,
    pub dropout: f64,
}

/// Concatenated pooled outputs of every backbone, `[n × Σ hidden]`.
pub fn extract_features(backbones: &[Backbone], examples: &[&TokenizedExample]) -> Result<Tensor> {
    if backbones.len() != BACKBONES {
        return Err(Error::Config(format!(
            "the ensemble takes exactly {BACKBONES} backbones, got {}",
            backbones.len()
        )));
    }
    let parts: Vec<Tensor> = backbones
        .iter()
        .map(|b| b.encoder.embed(examples))
        .collect::<Result<_>>()?;
    let n = examples.len();
    let width: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(n * width);
    for r in 0..n {
        for p in &parts {
            let h = p.shape()[1];
            out.extend_from_slice(&p.data()[r * h..(r + 1) * h]);
        }
    }
    Tensor::new(vec![n, width], out)
}

/// Split a feature matrix into owned rows.
pub fn feature_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let w = t.shape()[1];
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

fn fusion_shapes(input: usize, width: usize, classes: usize) -> [(&'static str, Vec<usize>); 6] {
    [
        ("fusion.dense1.weight", vec![input, width]),
        ("fusion.dense1.bias", vec![width]),
        ("fusion.dense2.weight", vec![width, width]),
        ("fusion.dense2.bias", vec![width]),
        ("fusion.out.weight", vec![width, classes]),
        ("fusion.out.bias", vec![classes]),
    ]
}

/// Fusion head on an already concatenated feature batch `[B × D]`.
pub fn fusion_forward(g: &mut Graph, p: &Bound, h: Var, dropout: f64, training: bool, rng: &mut SeedRng) -> Result<Var> {
    let h = g.dropout(h, dropout, rng, training)?;
    let x = g.matmul(h, p.var("fusion.dense1.weight")?)?;
    let x = g.add_bias(x, p.var("fusion.dense1.bias")?)?;
    let x = g.relu(x);
    let h1 = g.dropout(x, dropout, rng, training)?;
    let x = g.matmul(h1, p.var("fusion.dense2.weight")?)?;
    let x = g.add_bias(x, p.var("fusion.dense2.bias")?)?;
    let x = g.relu(x);
    let h_out = g.dropout(x, dropout, rng, training)?;
    let logits = g.matmul(h_out, p.var("fusion.out.weight")?)?;
    g.add_bias(logits, p.var("fusion.out.bias")?)
}

impl Ensemble {
    /// Fresh fusion head over `backbones`. `width` defaults to one
    /// backbone's hidden size. Weights use a ReLU-scaled truncated normal.
    pub fn new(backbones: Vec<Backbone>, classes: usize, width: Option<usize>, dropout: f64, seed: u64) -> Result<Self> {
        if backbones.len() != BACKBONES {
            return Err(Error::Config(format!(
                "the ensemble takes exactly {BACKBONES} backbones, got {}",
                backbones.len()
            )));
        }
        if Subtask::from_arity(classes).is_none() {
            return Err(Error::Config(format!("ensemble head must have 2, 4 or 11 classes, got {classes}")));
        }
        let input = backbones.iter().map(|b| b.encoder.config.hidden).sum();
        let width = width.unwrap_or(backbones[0].encoder.config.hidden);
        if width == 0 {
            return Err(Error::Config("fusion width must be positive".into()));
        }
        let root = SeedRng::new(seed).fork_named("fusion-init");
        let mut fusion = ParamStore::new();
        for (name, shape) in fusion_shapes(input, width, classes) {
            let std = (2.0 / shape[0] as f64).sqrt();
            fusion.insert(name, init_tensor(name, &shape, std, &root)?);
        }
        Ok(Self {
            backbones,
            fusion,
            classes,
            width,
            dropout,
        })
    }

    pub fn input_width(&self) -> usize {
        self.backbones.iter().map(|b| b.encoder.config.hidden).sum()
    }

    /// Checksums of the backbone parameter stores.
    pub fn backbone_checksums(&self) -> Vec<String> {
        self.backbones.iter().map(|b| b.encoder.params.checksum()).collect()
    }

    pub fn features(&self, examples: &[&TokenizedExample]) -> Result<Vec<Vec<f64>>> {
        Ok(feature_rows(&extract_features(&self.backbones, examples)?))
    }

    /// Predictions for raw examples.
    pub fn predict_examples(&self, examples: &[&TokenizedExample]) -> Result<Vec<usize>> {
        let rows = self.features(examples)?;
        let refs: Vec<&Vec<f64>> = rows.iter().collect();
        Classifier::predict(self, &refs)
    }

    /// Backbone files are stored as references next to the fusion tensors.
    /// Every backbone must have been loaded from (or saved to) a file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), "ensemble".to_string());
        meta.insert("classes".to_string(), self.classes.to_string());
        meta.insert("width".to_string(), self.width.to_string());
        meta.insert("dropout".to_string(), format!("{:?}", self.dropout));
        for (i, b) in self.backbones.iter().enumerate() {
            let src = b.source.as_ref().ok_or_else(|| {
                Error::Checkpoint(format!("backbone {i} has no file; save it before the ensemble"))
            })?;
            meta.insert(format!("backbone.{i}.path"), src.display().to_string());
            meta.insert(format!("backbone.{i}.digest"), b.encoder.digest());
        }
        Container {
            meta,
            tensors: self.fusion.clone(),
        }
        .save(path)
    }

    /// Relative backbone paths resolve against the ensemble file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        let get = |k: &str| {
            c.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("ensemble key `{k}` missing")))
        };
        if get("kind")? != "ensemble" {
            return Err(Error::Checkpoint("container does not hold an ensemble".into()));
        }
        let bad = |k: &str| Error::Checkpoint(format!("ensemble key `{k}` is malformed"));
        let classes: usize = get("classes")?.parse().map_err(|_| bad("classes"))?;
        let width: usize = get("width")?.parse().map_err(|_| bad("width"))?;
        let dropout: f64 = get("dropout")?.parse().map_err(|_| bad("dropout"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut backbones = Vec::with_capacity(BACKBONES);
        for i in 0..BACKBONES {
            let rel = PathBuf::from(get(&format!("backbone.{i}.path"))?);
            let file = if rel.is_absolute() { rel.clone() } else { base.join(&rel) };
            let encoder = Encoder::load(&file)?;
            if encoder.digest() != get(&format!("backbone.{i}.digest"))? {
                return Err(Error::Checkpoint(format!(
                    "backbone {i} at {} does not match the digest recorded in the ensemble",
                    file.display()
                )));
            }
            backbones.push(Backbone {
                encoder,
                source: Some(rel),
            });
        }
        let input: usize = backbones.iter().map(|b| b.encoder.config.hidden).sum();
        for (name, shape) in fusion_shapes(input, width, classes) {
            let t = c.tensors.get(name).map_err(|_| Error::Checkpoint(format!("tensor `{name}` missing")))?;
            if t.shape() != &shape[..] {
                return Err(Error::Checkpoint(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        Ok(Self {
            backbones,
            fusion: c.tensors,
            classes,
            width,
            dropout,
        })
    }
}

impl Classifier for Ensemble {
    type Example = Vec<f64>;

    fn classes(&self) -> usize {
        self.classes
    }

    fn params(&self) -> &ParamStore {
        &self.fusion
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.fusion
    }

    fn is_trainable(&self, name: &str) -> bool {
        name.starts_with("fusion.")
    }

    fn set_dropout(&mut self, p: f64) {
        self.dropout = p;
    }

    fn logits(&self, g: &mut Graph, p: &Bound, batch: &[&Vec<f64>], training: bool, rng: &mut SeedRng) -> Result<Var> {
        let d = self.input_width();
        let mut data = Vec::with_capacity(batch.len() * d);
        for row in batch {
            if row.len() != d {
                return Err(Error::Dimension(format!("feature row of width {} for a {d}-wide fusion head", row.len())));
            }
            data.extend_from_slice(row);
        }
        let h = g.constant(Tensor::new(vec![batch.len(), d], data)?);
        fusion_forward(g, p, h, self.dropout, training, rng)
    }

    fn predict(&self, examples: &[&Vec<f64>]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(examples.len());
        let mut rng = SeedRng::new(0);
        for chunk in examples.chunks(256) {
            let mut g = Graph::new();
            let p = self.fusion.bind(&mut g, |_| false);
            let l = self.logits(&mut g, &p, chunk, false, &mut rng)?;
            out.extend(crate::model::argmax_rows(g.value(l)));
        }
        Ok(out)
    }
}

/// Train a fusion head over three frozen backbones on `subtask` labels.
pub fn train_ensemble(
    backbones: Vec<Backbone>,
    train: &[TokenizedExample],
    dev: &[TokenizedExample],
    subtask: Subtask,
    width: Option<usize>,
    cfg: &TrainConfig,
) -> Result<(Ensemble, RunHistory)> {
    let mut model = Ensemble::new(backbones, subtask.arity(), width, cfg.dropout, cfg.seed)?;
    let featurize = |set: &[TokenizedExample]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let labeled: Vec<&TokenizedExample> = set.iter().filter(|e| e.label(subtask).is_some()).collect();
        if labeled.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let labels = labeled.iter().filter_map(|e| e.label(subtask)).collect();
        Ok((model.features(&labeled)?, labels))
    };
    let (train_x, train_y) = featurize(train)?;
    let (dev_x, dev_y) = featurize(dev)?;
    let train_pairs: Vec<(&Vec<f64>, usize)> = train_x.iter().zip(train_y).collect();
    let dev_pairs: Vec<(&Vec<f64>, usize)> = dev_x.iter().zip(dev_y).collect();
    let history = fit(&mut model, &train_pairs, &dev_pairs, cfg)?;
    Ok((model, history))
}
