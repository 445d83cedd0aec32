use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::container::Container;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::SeedRng;
use crate::tensor::{Graph, Tensor, Var};
use crate::text::{TokenizedExample, PAD};

/// Prefix of the classification head tensors.
pub const HEAD_PREFIX: &str = "head.";
/// Prefix of the MLM/NSP heads that only exist during pretraining.
pub const PRETRAIN_PREFIX: &str = "pretrain.";
const INFERENCE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    RandomInit,
    TaskAdapted,
    FineTuned,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::RandomInit => "random-init",
            Stage::TaskAdapted => "task-adapted",
            Stage::FineTuned => "fine-tuned",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-init" => Ok(Stage::RandomInit),
            "task-adapted" => Ok(Stage::TaskAdapted),
            "fine-tuned" => Ok(Stage::FineTuned),
            other => Err(Error::Checkpoint(format!("unknown stage `{other}`"))),
        }
    }
}

/// Where a set of weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    pub seed: u64,
    /// Epoch the weights were taken from, when produced by training.
    pub epoch: Option<usize>,
    /// Digest of the checkpoint these weights were derived from.
    pub parent: Option<String>,
}

impl Provenance {
    fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("stage".into(), self.stage.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("epoch".into(), self.epoch.map_or(String::new(), |e| e.to_string()));
        m.insert("parent".into(), self.parent.clone().unwrap_or_default());
        m
    }

    fn from_kv(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            m.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("provenance key `{k}` missing")))
        };
        let bad = |k: &str| Error::Checkpoint(format!("provenance key `{k}` is malformed"));
        let epoch = get("epoch")?;
        let parent = get("parent")?;
        Ok(Self {
            stage: get("stage")?.parse()?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            epoch: if epoch.is_empty() {
                None
            } else {
                Some(epoch.parse().map_err(|_| bad("epoch"))?)
            },
            parent: (!parent.is_empty()).then(|| parent.to_string()),
        })
    }
}

/// Token ids of a mini-batch laid out `[batch × seq]`, trimmed to the
/// longest real sequence in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBatch {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// `false` at padding positions.
    pub keep: Vec<bool>,
    pub batch: usize,
    pub seq: usize,
}

impl EncoderBatch {
    pub fn from_examples(examples: &[&TokenizedExample]) -> Result<Self> {
        let seqs: Vec<(&[usize], Option<&[usize]>)> = examples
            .iter()
            .map(|e| (&e.token_ids[..e.real_len()], None))
            .collect();
        Self::from_sequences(&seqs)
    }

    /// Build from unpadded sequences with optional segment ids (zero when absent).
    pub fn from_sequences(seqs: &[(&[usize], Option<&[usize]>)]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let seq = seqs.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0);
        if seq == 0 {
            return Err(Error::Input("batch contains only empty sequences".into()));
        }
        let batch = seqs.len();
        let mut out = Self {
            ids: vec![PAD; batch * seq],
            segments: vec![0; batch * seq],
            keep: vec![false; batch * seq],
            batch,
            seq,
        };
        for (b, (ids, segs)) in seqs.iter().enumerate() {
            if let Some(s) = segs {
                if s.len() != ids.len() {
                    return Err(Error::Input("segment ids and token ids differ in length".into()));
                }
                out.segments[b * seq..b * seq + s.len()].copy_from_slice(s);
            }
            out.ids[b * seq..b * seq + ids.len()].copy_from_slice(ids);
            out.keep[b * seq..b * seq + ids.len()].fill(true);
        }
        Ok(out)
    }
}

/// Transformer encoder body with a classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
    pub provenance: Provenance,
}

/// Every tensor the config implies, with its shape. Pretraining heads are
/// included on request.
pub fn expected_shapes(c: &EncoderConfig, pretrain_heads: bool) -> BTreeMap<String, Vec<usize>> {
    let (h, f) = (c.hidden, c.ffn);
    let mut m = BTreeMap::new();
    let mut put = |name: String, shape: Vec<usize>| {
        m.insert(name, shape);
    };
    put("emb.token".into(), vec![c.vocab_size, h]);
    put("emb.position".into(), vec![c.max_len, h]);
    put("emb.segment".into(), vec![2, h]);
    put("emb.ln.gamma".into(), vec![h]);
    put("emb.ln.beta".into(), vec![h]);
    for l in 0..c.layers {
        let p = format!("layer{l}");
        for proj in ["q", "k", "v", "o"] {
            put(format!("{p}.attn.{proj}.weight"), vec![h, h]);
        }
        // No key bias: it adds the same constant to every score in a row,
        // which softmax cancels, so it could never be learned.
        for proj in ["q", "v", "o"] {
            put(format!("{p}.attn.{proj}.bias"), vec![h]);
        }
        put(format!("{p}.attn_ln.gamma"), vec![h]);
        put(format!("{p}.attn_ln.beta"), vec![h]);
        put(format!("{p}.ffn.in.weight"), vec![h, f]);
        put(format!("{p}.ffn.in.bias"), vec![f]);
        put(format!("{p}.ffn.out.weight"), vec![f, h]);
        put(format!("{p}.ffn.out.bias"), vec![h]);
        put(format!("{p}.ffn_ln.gamma"), vec![h]);
        put(format!("{p}.ffn_ln.beta"), vec![h]);
    }
    put("head.weight".into(), vec![h, c.head_classes]);
    put("head.bias".into(), vec![c.head_classes]);
    if pretrain_heads {
        put("pretrain.mlm.dense.weight".into(), vec![h, h]);
        put("pretrain.mlm.dense.bias".into(), vec![h]);
        put("pretrain.mlm.ln.gamma".into(), vec![h]);
        put("pretrain.mlm.ln.beta".into(), vec![h]);
        put("pretrain.mlm.bias".into(), vec![c.vocab_size]);
        put("pretrain.nsp.weight".into(), vec![h, 2]);
        put("pretrain.nsp.bias".into(), vec![2]);
    }
    m
}

/// Initial value for a named tensor: zeros for biases and shifts, ones for
/// layer-norm gains, truncated normal (resampled beyond two deviations)
/// for everything else. Each name gets its own stream.
pub(crate) fn init_tensor(name: &str, shape: &[usize], std: f64, root: &SeedRng) -> Result<Tensor> {
    if name.ends_with(".gamma") {
        return Ok(Tensor::ones(shape));
    }
    if name.ends_with("bias") || name.ends_with(".beta") {
        return Ok(Tensor::zeros(shape));
    }
    let mut rng = root.fork_named(name);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(&mut rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

impl Encoder {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = SeedRng::new(seed).fork_named("encoder-init");
        let mut params = ParamStore::new();
        for (name, shape) in expected_shapes(&config, false) {
            let t = init_tensor(&name, &shape, config.init_std, &root)?;
            params.insert(name, t);
        }
        Ok(Self {
            config,
            params,
            provenance: Provenance {
                stage: Stage::RandomInit,
                seed,
                epoch: None,
                parent: None,
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn has_pretrain_heads(&self) -> bool {
        self.params.contains("pretrain.nsp.weight")
    }

    /// Attach freshly initialized MLM/NSP heads (no-op when present).
    pub fn add_pretrain_heads(&mut self, seed: u64) -> Result<()> {
        if self.has_pretrain_heads() {
            return Ok(());
        }
        let root = SeedRng::new(seed).fork_named("pretrain-heads");
        for (name, shape) in expected_shapes(&self.config, true) {
            if name.starts_with(PRETRAIN_PREFIX) {
                let t = init_tensor(&name, &shape, self.config.init_std, &root)?;
                self.params.insert(name, t);
            }
        }
        Ok(())
    }

    pub fn strip_pretrain_heads(&mut self) {
        self.params.remove_prefix(PRETRAIN_PREFIX);
    }

    /// Replace the classification head with a fresh `classes`-way head.
    /// Every body tensor is left untouched.
    pub fn replace_head(&mut self, classes: usize, seed: u64) -> Result<()> {
        let mut config = self.config.clone();
        config.head_classes = classes;
        config.validate()?;
        let root = SeedRng::new(seed).fork_named("head-init");
        self.params.remove_prefix(HEAD_PREFIX);
        for (name, shape) in expected_shapes(&config, false) {
            if name.starts_with(HEAD_PREFIX) {
                let t = init_tensor(&name, &shape, config.init_std, &root)?;
                self.params.insert(name, t);
            }
        }
        self.config = config;
        Ok(())
    }

    /// Body-only view of the parameter names.
    pub fn is_body(name: &str) -> bool {
        !name.starts_with(HEAD_PREFIX) && !name.starts_with(PRETRAIN_PREFIX)
    }

    /// Final-layer hidden states, `[batch·seq × hidden]`.
    pub fn hidden_states(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &EncoderBatch,
        training: bool,
        rng: &mut SeedRng,
    ) -> Result<Var> {
        let c = &self.config;
        let (b, t, h) = (batch.batch, batch.seq, c.hidden);
        if t > c.max_len {
            return Err(Error::Input(format!(
                "sequence length {t} exceeds the model's max_len {}",
                c.max_len
            )));
        }
        let positions: Vec<usize> = (0..b * t).map(|i| i % t).collect();
        let tok = g.rows(p.var("emb.token")?, &batch.ids)?;
        let pos = g.rows(p.var("emb.position")?, &positions)?;
        let seg = g.rows(p.var("emb.segment")?, &batch.segments)?;
        let x = g.add(tok, pos)?;
        let x = g.add(x, seg)?;
        let x = g.layer_norm(x, p.var("emb.ln.gamma")?, p.var("emb.ln.beta")?, c.layer_norm_eps)?;
        let mut x = g.dropout(x, c.hidden_dropout, rng, training)?;

        let (a, dh) = (c.heads, c.head_dim());
        let split_heads = |g: &mut Graph, v: Var| -> Result<Var> {
            let v = g.reshape(v, &[b, t, a, dh])?;
            g.permute(v, &[0, 2, 1, 3])
        };
        for l in 0..c.layers {
            let n = |s: &str| format!("layer{l}.{s}");
            let q = g.matmul(x, p.var(&n("attn.q.weight"))?)?;
            let q = g.add_bias(q, p.var(&n("attn.q.bias"))?)?;
            let k = g.matmul(x, p.var(&n("attn.k.weight"))?)?;
            let v = g.matmul(x, p.var(&n("attn.v.weight"))?)?;
            let v = g.add_bias(v, p.var(&n("attn.v.bias"))?)?;
            let (q, k, v) = (split_heads(g, q)?, split_heads(g, k)?, split_heads(g, v)?);

            let scores = g.batch_matmul(q, k, true)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let scores = g.mask_keys(scores, &batch.keep, b)?;
            let probs = g.softmax(scores)?;
            let probs = g.dropout(probs, c.attn_dropout, rng, training)?;
            let ctx = g.batch_matmul(probs, v, false)?;
            let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = g.reshape(ctx, &[b * t, h])?;

            let o = g.matmul(ctx, p.var(&n("attn.o.weight"))?)?;
            let o = g.add_bias(o, p.var(&n("attn.o.bias"))?)?;
            let o = g.dropout(o, c.hidden_dropout, rng, training)?;
            let r = g.add(x, o)?;
            let x1 = g.layer_norm(r, p.var(&n("attn_ln.gamma"))?, p.var(&n("attn_ln.beta"))?, c.layer_norm_eps)?;

            let f = g.matmul(x1, p.var(&n("ffn.in.weight"))?)?;
            let f = g.add_bias(f, p.var(&n("ffn.in.bias"))?)?;
            let f = g.gelu(f);
            let f = g.matmul(f, p.var(&n("ffn.out.weight"))?)?;
            let f = g.add_bias(f, p.var(&n("ffn.out.bias"))?)?;
            let f = g.dropout(f, c.hidden_dropout, rng, training)?;
            let r = g.add(x1, f)?;
            x = g.layer_norm(r, p.var(&n("ffn_ln.gamma"))?, p.var(&n("ffn_ln.beta"))?, c.layer_norm_eps)?;
        }
        Ok(x)
    }

    /// Hidden state at the leading `[CLS]` position, `[batch × hidden]`.
    pub fn pooled(&self, g: &mut Graph, p: &Bound, batch: &EncoderBatch, training: bool, rng: &mut SeedRng) -> Result<Var> {
        let hs = self.hidden_states(g, p, batch, training, rng)?;
        let cls: Vec<usize> = (0..batch.batch).map(|i| i * batch.seq).collect();
        g.rows(hs, &cls)
    }

    /// Head applied to a pooled representation.
    pub fn head(&self, g: &mut Graph, p: &Bound, pooled: Var, training: bool, rng: &mut SeedRng) -> Result<Var> {
        let x = g.dropout(pooled, self.config.classifier_dropout, rng, training)?;
        let logits = g.matmul(x, p.var("head.weight")?)?;
        g.add_bias(logits, p.var("head.bias")?)
    }

    /// Class logits, `[batch × head_classes]`.
    pub fn classify(&self, g: &mut Graph, p: &Bound, batch: &EncoderBatch, training: bool, rng: &mut SeedRng) -> Result<Var> {
        let pooled = self.pooled(g, p, batch, training, rng)?;
        self.head(g, p, pooled, training, rng)
    }

    fn inference<F>(&self, examples: &[&TokenizedExample], width: usize, f: F) -> Result<Tensor>
    where
        F: Fn(&Self, &mut Graph, &Bound, &EncoderBatch, &mut SeedRng) -> Result<Var>,
    {
        if examples.is_empty() {
            return Err(Error::Input("no examples to run".into()));
        }
        let mut out = Vec::with_capacity(examples.len() * width);
        let mut rng = SeedRng::new(0);
        for chunk in examples.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, |_| false);
            let batch = EncoderBatch::from_examples(chunk)?;
            let v = f(self, &mut g, &p, &batch, &mut rng)?;
            out.extend_from_slice(g.value(v).data());
        }
        Tensor::new(vec![examples.len(), width], out)
    }

    /// Pooled features in inference mode, `[n × hidden]`.
    pub fn embed(&self, examples: &[&TokenizedExample]) -> Result<Tensor> {
        self.inference(examples, self.config.hidden, |m, g, p, b, r| m.pooled(g, p, b, false, r))
    }

    /// Logits in inference mode, `[n × head_classes]`.
    pub fn logits(&self, examples: &[&TokenizedExample]) -> Result<Tensor> {
        self.inference(examples, self.config.head_classes, |m, g, p, b, r| m.classify(g, p, b, false, r))
    }

    pub fn predict(&self, examples: &[&TokenizedExample]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(examples)?))
    }

    pub fn to_container(&self) -> Container {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), "encoder".to_string());
        for (k, v) in self.config.to_kv() {
            meta.insert(format!("config.{k}"), v);
        }
        for (k, v) in self.provenance.to_kv() {
            meta.insert(format!("provenance.{k}"), v);
        }
        Container {
            meta,
            tensors: self.params.clone(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        if c.meta.get("kind").map(String::as_str) != Some("encoder") {
            return Err(Error::Checkpoint("container does not hold an encoder".into()));
        }
        let section = |prefix: &str| -> BTreeMap<String, String> {
            c.meta
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
                .collect()
        };
        let config = EncoderConfig::from_kv(&section("config."))?;
        let provenance = Provenance::from_kv(&section("provenance."))?;
        let expected = expected_shapes(&config, true);
        for (name, t) in c.tensors.iter() {
            match expected.get(name) {
                None => return Err(Error::Checkpoint(format!("unexpected tensor `{name}`"))),
                Some(s) if s[..] != t.shape()[..] => {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` has shape {:?}, config implies {s:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        for name in expected.keys().filter(|n| !n.starts_with(PRETRAIN_PREFIX)) {
            if !c.tensors.contains(name) {
                return Err(Error::Checkpoint(format!("tensor `{name}` missing")));
            }
        }
        Ok(Self {
            config,
            params: c.tensors,
            provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// Load a checkpoint into a `classes`-way slot. A head of a different
    /// arity is replaced by a fresh one seeded with `seed`.
    pub fn load_for_classes(path: &Path, classes: usize, seed: u64) -> Result<Self> {
        let mut m = Self::load(path)?;
        if m.config.head_classes != classes {
            m.replace_head(classes, seed)?;
        }
        Ok(m)
    }

    /// Content digest of the serialized checkpoint.
    pub fn digest(&self) -> String {
        self.to_container().digest()
    }
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let m = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks(m)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{CLS, SEP};

    fn tiny(classes: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 30,
            hidden: 8,
            layers: 2,
            heads: 2,
            ffn: 16,
            max_len: 12,
            head_classes: classes,
            ..EncoderConfig::default()
        }
    }

    fn example(tokens: &[usize], max_len: usize) -> TokenizedExample {
        let mut ids = vec![CLS];
        ids.extend(tokens);
        ids.push(SEP);
        let mut mask = vec![1u8; ids.len()];
        ids.resize(max_len, PAD);
        mask.resize(max_len, 0);
        TokenizedExample {
            id: String::new(),
            token_ids: ids,
            attention_mask: mask,
            label_a: None,
            label_b: None,
            label_c: None,
        }
    }

    #[test]
    fn parameter_count_closed_form() {
        let c = EncoderConfig::default();
        let m = Encoder::init(c.clone(), 1).unwrap();
        let (v, h, f, l, p, k) = (c.vocab_size, c.hidden, c.ffn, c.layers, c.max_len, c.head_classes);
        let embeddings = v * h + p * h + 2 * h + 2 * h;
        let attention = 4 * h * h + 3 * h + 2 * h;
        let ffn = h * f + f + f * h + h + 2 * h;
        let head = h * k + k;
        assert_eq!(m.param_count(), embeddings + l * (attention + ffn) + head);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = Encoder::init(tiny(2), 5).unwrap();
        let b = Encoder::init(tiny(2), 5).unwrap();
        let c = Encoder::init(tiny(2), 6).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        for (name, t) in a.params.iter() {
            if name.ends_with("bias") || name.ends_with("beta") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            } else if !name.ends_with("gamma") {
                assert!(t.data().iter().all(|x| x.abs() <= 0.04), "{name}");
            }
        }
    }

    #[test]
    fn indivisible_heads_is_config_error() {
        let c = EncoderConfig {
            hidden: 10,
            heads: 4,
            ..EncoderConfig::default()
        };
        assert_eq!(Encoder::init(c, 0).unwrap_err().category(), "config");
    }

    #[test]
    fn output_shapes_per_arity() {
        let exs = [example(&[5, 6], 12), example(&[7], 12), example(&[], 12)];
        let refs: Vec<&TokenizedExample> = exs.iter().collect();
        for classes in [2, 4, 11] {
            let m = Encoder::init(tiny(classes), 3).unwrap();
            assert_eq!(m.embed(&refs).unwrap().shape(), &[3, 8]);
            assert_eq!(m.logits(&refs).unwrap().shape(), &[3, classes]);
        }
    }

    #[test]
    fn padding_does_not_change_pooled() {
        let m = Encoder::init(tiny(2), 3).unwrap();
        let short = example(&[5, 6, 7], 12);
        let long = example(&[9, 9, 9, 9, 9, 9, 9], 12);
        let alone = m.embed(&[&short]).unwrap();
        let padded = m.embed(&[&short, &long]).unwrap();
        for i in 0..8 {
            assert!((alone.data()[i] - padded.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_token_is_input_error() {
        let m = Encoder::init(tiny(2), 3).unwrap();
        let e = example(&[99], 12);
        assert_eq!(m.logits(&[&e]).unwrap_err().category(), "input");
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let mut m = Encoder::init(tiny(4), 3).unwrap();
        for name in ["head.weight", "head.bias"] {
            m.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let e = example(&[5], 12);
        assert!(m.logits(&[&e]).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_and_head_swap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = Encoder::init(tiny(4), 3).unwrap();
        m.provenance.epoch = Some(2);
        m.save(&path).unwrap();
        let back = Encoder::load(&path).unwrap();
        assert_eq!(back, m);

        let swapped = Encoder::load_for_classes(&path, 2, 9).unwrap();
        assert_eq!(swapped.config.head_classes, 2);
        for (name, t) in m.params.iter().filter(|(n, _)| Encoder::is_body(n)) {
            assert_eq!(swapped.params.get(name).unwrap(), t);
        }
        assert_eq!(swapped.params.get("head.weight").unwrap().shape(), &[8, 2]);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert_eq!(Encoder::load(&path).unwrap_err().category(), "checkpoint");
    }

    #[test]
    fn full_model_gradient_check() {
        let mut c = tiny(4);
        c.hidden = 4;
        c.ffn = 6;
        c.vocab_size = 12;
        c.init_std = 0.5;
        let m = Encoder::init(c, 11).unwrap();
        let exs = [example(&[5, 6, 7], 12), example(&[8], 12)];
        let refs: Vec<&TokenizedExample> = exs.iter().collect();
        let batch = EncoderBatch::from_examples(&refs).unwrap();
        let err = crate::tensor::finite_difference_check(
            |g, p| {
                let logits = m.classify(g, p, &batch, false, &mut SeedRng::new(0))?;
                g.cross_entropy(logits, &[1, 3], &[0.7, 1.9])
            },
            &m.params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 3.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
