use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::{class_weights, weighted_cross_entropy, ClassWeights};
use super::optim::{step_decay_lr, AdamW, AdamWConfig};
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::model::{Encoder, EncoderBatch};
use crate::params::{Bound, ParamStore};
use crate::rng::SeedRng;
use crate::tensor::{Graph, Var};
use crate::text::TokenizedExample;

/// Anything trainable by [`fit`]: a parameter store, a differentiable
/// forward pass to logits, and an inference path.
pub trait Classifier {
    type Example;

    fn classes(&self) -> usize;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Tensors outside this set are bound as constants.
    fn is_trainable(&self, name: &str) -> bool;
    fn set_dropout(&mut self, p: f64);
    fn logits(&self, g: &mut Graph, p: &Bound, batch: &[&Self::Example], training: bool, rng: &mut SeedRng)
        -> Result<Var>;
    fn predict(&self, examples: &[&Self::Example]) -> Result<Vec<usize>>;
}

impl Classifier for Encoder {
    type Example = TokenizedExample;

    fn classes(&self) -> usize {
        self.config.head_classes
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn is_trainable(&self, name: &str) -> bool {
        !name.starts_with(crate::model::encoder::PRETRAIN_PREFIX)
    }

    fn set_dropout(&mut self, p: f64) {
        self.config.classifier_dropout = p;
    }

    fn logits(&self, g: &mut Graph, p: &Bound, batch: &[&TokenizedExample], training: bool, rng: &mut SeedRng) -> Result<Var> {
        let b = EncoderBatch::from_examples(batch)?;
        self.classify(g, p, &b, training, rng)
    }

    fn predict(&self, examples: &[&TokenizedExample]) -> Result<Vec<usize>> {
        Encoder::predict(self, examples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after training.
    pub kept_epoch: usize,
    pub class_weights: Option<ClassWeights>,
}

impl RunHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn best_dev_macro_f1(&self) -> Option<f64> {
        self.records.get(self.kept_epoch).and_then(|r| r.dev_macro_f1)
    }

    /// `epoch,train_loss,dev_macro_f1,lr`; an empty dev cell means no dev set.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("epoch,train_loss,dev_macro_f1,lr\n");
        for r in &self.records {
            let dev = r.dev_macro_f1.map_or(String::new(), |f| f.to_string());
            s.push_str(&format!("{},{},{dev},{}\n", r.epoch, r.train_loss, r.lr));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Per-class tallies of integer labels.
pub fn label_counts(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<usize> {
    let mut c = vec![0; classes];
    for l in labels {
        if l < classes {
            c[l] += 1;
        }
    }
    c
}

/// Gradients must only exist for trainable tensors.
fn check_frozen<M: Classifier>(model: &M, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    match grads.keys().find(|n| !model.is_trainable(n)) {
        Some(n) => Err(Error::Internal(format!("gradient reached frozen tensor `{n}`"))),
        None => Ok(()),
    }
}

/// Mini-batch training with AdamW and step decay. Batches are reshuffled
/// each epoch from a stream derived from `cfg.seed`. With dev data and
/// `select_best`, the model ends holding the best-dev epoch (earliest on
/// ties); otherwise it holds the last epoch.
pub fn fit<M: Classifier>(
    model: &mut M,
    train: &[(&M::Example, usize)],
    dev: &[(&M::Example, usize)],
    cfg: &TrainConfig,
) -> Result<RunHistory> {
    cfg.validate()?;
    let classes = model.classes();
    let merged: Vec<(&M::Example, usize)>;
    let (train, dev) = if cfg.merge_dev {
        merged = train.iter().chain(dev).copied().collect();
        (&merged[..], &[][..])
    } else {
        (train, dev)
    };
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let selecting = cfg.select_best && !cfg.merge_dev;
    if selecting && dev.is_empty() {
        return Err(Error::Config("best-dev selection needs a non-empty dev set".into()));
    }
    if let Some((_, l)) = train.iter().chain(dev).find(|(_, l)| *l >= classes) {
        return Err(Error::Input(format!("label {l} out of range for a {classes}-way head")));
    }
    let weights = if cfg.use_class_weights {
        Some(class_weights(&label_counts(train.iter().map(|t| t.1), classes))?)
    } else {
        None
    };

    model.set_dropout(cfg.dropout);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let root = SeedRng::new(cfg.seed).fork_named("fit");
    let dev_inputs: Vec<&M::Example> = dev.iter().map(|d| d.0).collect();
    let dev_golds: Vec<usize> = dev.iter().map(|d| d.1).collect();

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        let lr = step_decay_lr(cfg.learning_rate, epoch, cfg.step_size, cfg.gamma);
        let mut order: Vec<usize> = (0..train.len()).collect();
        root.fork(2 * epoch as u64).shuffle(&mut order);
        let mut drop_rng = root.fork(2 * epoch as u64 + 1);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let inputs: Vec<&M::Example> = idx.iter().map(|&i| train[i].0).collect();
            let targets: Vec<usize> = idx.iter().map(|&i| train[i].1).collect();
            let mut g = Graph::new();
            let p = model.params().bind(&mut g, |n| model.is_trainable(n));
            let logits = model.logits(&mut g, &p, &inputs, true, &mut drop_rng)?;
            let loss = weighted_cross_entropy(&mut g, logits, &targets, weights.as_ref())?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss became {value} at epoch {epoch}")));
            }
            g.backward(loss)?;
            let grads = p.grads(&g);
            check_frozen(model, &grads)?;
            opt.step(model.params_mut(), &grads, lr)?;
            loss_sum += value * idx.len() as f64;
        }
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(macro_f1(&model.predict(&dev_inputs)?, &dev_golds, classes)?)
        };
        let train_loss = loss_sum / train.len() as f64;
        log::info!(
            "epoch {epoch}: loss {train_loss:.5} lr {lr:e}{}",
            dev_f1.map_or(String::new(), |f| format!(" dev macro-F1 {f:.4}"))
        );
        if let (true, Some(f)) = (selecting, dev_f1) {
            if best.as_ref().map_or(true, |b| f > b.0) {
                best = Some((f, epoch, model.params().clone()));
            }
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            dev_macro_f1: dev_f1,
            lr,
        });
    }
    let kept_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => cfg.epochs - 1,
    };
    Ok(RunHistory {
        records,
        kept_epoch,
        class_weights: weights,
    })
}

/// Pair each example with its gold label for `subtask`, dropping unlabeled ones.
pub fn labeled_pairs(examples: &[TokenizedExample], subtask: crate::text::Subtask) -> Vec<(&TokenizedExample, usize)> {
    examples
        .iter()
        .filter_map(|e| e.label(subtask).map(|l| (e, l)))
        .collect()
}

/// Fine-tune an encoder on the `subtask` labels of `train`, selecting on
/// `dev`. The head arity must match the subtask. On return the model is
/// tagged as fine-tuned, with the kept epoch and its parent's digest.
pub fn train_encoder(
    model: &mut Encoder,
    train: &[TokenizedExample],
    dev: &[TokenizedExample],
    subtask: crate::text::Subtask,
    cfg: &TrainConfig,
) -> Result<RunHistory> {
    if model.config.head_classes != subtask.arity() {
        return Err(Error::Config(format!(
            "model has a {}-way head but subtask {subtask} has {} classes",
            model.config.head_classes,
            subtask.arity()
        )));
    }
    let parent = model.digest();
    let history = fit(model, &labeled_pairs(train, subtask), &labeled_pairs(dev, subtask), cfg)?;
    model.provenance = crate::model::Provenance {
        stage: crate::model::Stage::FineTuned,
        seed: cfg.seed,
        epoch: Some(history.kept_epoch),
        parent: Some(parent),
    };
    Ok(history)
}
