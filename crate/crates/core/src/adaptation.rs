//! Task-adaptive pretraining: sentence filtering, next-sentence pairs,
//! masked-token corruption, joint MLM + NSP training, and warm-started
//! fine-tuning.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Encoder, EncoderBatch, Provenance, Stage};
use crate::params::Bound;
use crate::rng::SeedRng;
use crate::tensor::{Graph, Var};
use crate::text::{tokenize, Subtask, TokenizedExample, Vocab, CLS, MASK, NUM_RESERVED, SEP};
use crate::training::{optim::AdamW, optim::AdamWConfig, train_encoder, RunHistory, TrainConfig};

pub const CACHE_FORMAT: &str = "hiertext-pretrain";
pub const CACHE_VERSION: u32 = 1;

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

/// Split on runs of `.`, `?` or `!` that are followed by whitespace or the
/// end of the text. Fragments without any word character are discarded.
pub fn split_sentences(doc: &str) -> Vec<String> {
    let chars: Vec<char> = doc.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if is_terminator(chars[i]) {
            let mut j = i;
            while j < chars.len() && is_terminator(chars[j]) {
                j += 1;
            }
            if j == chars.len() || chars[j].is_whitespace() {
                out.push(chars[start..j].iter().collect::<String>());
                start = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out.push(chars[start..].iter().collect());
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| s.chars().any(|c| !c.is_whitespace() && !is_terminator(c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub input_docs: usize,
    pub kept_docs: usize,
    pub kept_sentences: usize,
}

impl RetentionStats {
    pub fn retention(&self) -> f64 {
        if self.input_docs == 0 {
            0.0
        } else {
            self.kept_docs as f64 / self.input_docs as f64
        }
    }
}

/// Keep documents with at least two sentences, each returned as its
/// sentence list.
pub fn prepare_pretrain_corpus<S: AsRef<str>>(docs: &[S]) -> (Vec<Vec<String>>, RetentionStats) {
    let kept: Vec<Vec<String>> = docs
        .iter()
        .map(|d| split_sentences(d.as_ref()))
        .filter(|s| s.len() >= 2)
        .collect();
    let stats = RetentionStats {
        input_docs: docs.len(),
        kept_docs: kept.len(),
        kept_sentences: kept.iter().map(Vec::len).sum(),
    };
    if kept.is_empty() {
        log::warn!("no document has two or more sentences; the prepared corpus is empty");
    }
    (kept, stats)
}

/// Two text segments and whether the second truly follows the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub first: String,
    pub second: String,
    pub is_next: bool,
}

/// One pair per adjacent sentence pair. With probability `1 − is_next_prob`
/// the successor is swapped for a random sentence of another document that
/// differs from the true successor.
pub fn make_nsp_pairs(docs: &[Vec<String>], is_next_prob: f64, rng: &mut SeedRng) -> Result<Vec<SentencePair>> {
    if docs.len() < 2 {
        return Err(Error::Input(format!(
            "next-sentence negatives need at least 2 documents, got {}",
            docs.len()
        )));
    }
    let mut out = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        for w in doc.windows(2) {
            let is_next = rng.uniform() < is_next_prob;
            let second = if is_next {
                w[1].clone()
            } else {
                negative(docs, d, &w[1], rng)?
            };
            out.push(SentencePair {
                first: w[0].clone(),
                second,
                is_next,
            });
        }
    }
    Ok(out)
}

fn negative(docs: &[Vec<String>], from: usize, successor: &str, rng: &mut SeedRng) -> Result<String> {
    for _ in 0..64 {
        let mut o = rng.below(docs.len() - 1);
        if o >= from {
            o += 1;
        }
        let s = &docs[o][rng.below(docs[o].len())];
        if s != successor {
            return Ok(s.clone());
        }
    }
    // Near-duplicate corpus: fall back to an exhaustive search.
    docs.iter()
        .enumerate()
        .filter(|(i, _)| *i != from)
        .flat_map(|(_, d)| d.iter())
        .find(|s| *s != successor)
        .cloned()
        .ok_or_else(|| Error::Input("every other sentence equals the true successor; no negative exists".into()))
}

/// A framed sentence pair, optionally with masked-token targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainExample {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// `(position, original id)` of every corrupted position.
    pub mlm_targets: Vec<(usize, usize)>,
    pub is_next: bool,
}

impl PretrainExample {
    /// `[CLS] a [SEP] b [SEP]`, trimming the longer segment first until the
    /// pair fits `max_len`.
    pub fn frame(pair: &SentencePair, vocab: &Vocab, max_len: usize) -> Result<Self> {
        if max_len < 5 {
            return Err(Error::Parameter(format!("pair framing needs max_len ≥ 5, got {max_len}")));
        }
        let mut a: Vec<usize> = tokenize(&pair.first).iter().map(|t| vocab.id(t)).collect();
        let mut b: Vec<usize> = tokenize(&pair.second).iter().map(|t| vocab.id(t)).collect();
        if a.is_empty() || b.is_empty() {
            return Err(Error::Input("sentence pair has an empty segment".into()));
        }
        while a.len() + b.len() > max_len - 3 {
            if a.len() >= b.len() {
                a.pop();
            } else {
                b.pop();
            }
        }
        let mut token_ids = Vec::with_capacity(a.len() + b.len() + 3);
        token_ids.push(CLS);
        token_ids.extend(&a);
        token_ids.push(SEP);
        let first_len = token_ids.len();
        token_ids.extend(&b);
        token_ids.push(SEP);
        let segment_ids = (0..token_ids.len()).map(|i| usize::from(i >= first_len)).collect();
        Ok(Self {
            token_ids,
            segment_ids,
            mlm_targets: Vec::new(),
            is_next: pair.is_next,
        })
    }

    /// Positions eligible for masking: everything but the framing tokens.
    pub fn content_positions(&self) -> Vec<usize> {
        (0..self.token_ids.len())
            .filter(|&i| self.token_ids[i] != CLS && self.token_ids[i] != SEP)
            .collect()
    }

    /// Undo the corruption recorded in `mlm_targets`.
    pub fn unmasked(&self) -> Self {
        let mut e = self.clone();
        for &(p, id) in &self.mlm_targets {
            e.token_ids[p] = id;
        }
        e.mlm_targets.clear();
        e
    }
}

const MAX_SELECTION_ROUNDS: usize = 64;

/// Select each content token with probability `select_prob`; a selected
/// token becomes `[MASK]` 80% of the time, a random vocabulary token 10%,
/// and stays unchanged 10%. If a round selects nothing it is redrawn; after
/// 64 empty rounds one content position is picked uniformly.
pub fn mlm_mask(example: &PretrainExample, vocab_size: usize, select_prob: f64, rng: &mut SeedRng) -> Result<PretrainExample> {
    let base = example.unmasked();
    let content = base.content_positions();
    if content.is_empty() {
        return Err(Error::Input("example has no maskable token".into()));
    }
    if vocab_size <= NUM_RESERVED {
        return Err(Error::Parameter("vocabulary has no ordinary tokens".into()));
    }
    let mut chosen = Vec::new();
    for _ in 0..MAX_SELECTION_ROUNDS {
        chosen = content.iter().copied().filter(|_| rng.uniform() < select_prob).collect();
        if !chosen.is_empty() {
            break;
        }
    }
    if chosen.is_empty() {
        chosen.push(content[rng.below(content.len())]);
    }
    let mut out = base;
    for &p in &chosen {
        let original = out.token_ids[p];
        let r = rng.uniform();
        if r < 0.8 {
            out.token_ids[p] = MASK;
        } else if r < 0.9 {
            out.token_ids[p] = NUM_RESERVED + rng.below(vocab_size - NUM_RESERVED);
        }
        out.mlm_targets.push((p, original));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mask_prob: f64,
    pub is_next_prob: f64,
    pub heldout_fraction: f64,
    /// Re-mask training pairs every epoch instead of once.
    pub dynamic_masking: bool,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 32,
            epochs: 2,
            mask_prob: 0.15,
            is_next_prob: 0.5,
            heldout_fraction: 0.02,
            dynamic_masking: false,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("pretraining needs positive learning_rate, batch_size and epochs".into()));
        }
        for (name, p) in [
            ("mask_prob", self.mask_prob),
            ("is_next_prob", self.is_next_prob),
            ("heldout_fraction", self.heldout_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Masked pretraining examples split into training and held-out parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainCorpus {
    pub train: Vec<PretrainExample>,
    pub heldout: Vec<PretrainExample>,
    pub stats: RetentionStats,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    version: u32,
    stats: RetentionStats,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    heldout: bool,
    #[serde(flatten)]
    example: PretrainExample,
}

impl PretrainCorpus {
    /// Filter, pair, frame, hold out and statically mask `docs`.
    pub fn build<S: AsRef<str>>(docs: &[S], vocab: &Vocab, max_len: usize, cfg: &PretrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (kept, stats) = prepare_pretrain_corpus(docs);
        if kept.is_empty() {
            return Err(Error::Input("pretraining corpus is empty after sentence filtering".into()));
        }
        let root = SeedRng::new(cfg.seed);
        let pairs = make_nsp_pairs(&kept, cfg.is_next_prob, &mut root.fork_named("nsp"))?;
        let mut framed: Vec<PretrainExample> = pairs
            .iter()
            .map(|p| PretrainExample::frame(p, vocab, max_len))
            .collect::<Result<_>>()?;
        root.fork_named("heldout").shuffle(&mut framed);
        let n_held = ((framed.len() as f64 * cfg.heldout_fraction).round() as usize).clamp(1, framed.len() - 1);
        let mut mask_rng = root.fork_named("mask");
        let mut masked: Vec<PretrainExample> = framed
            .iter()
            .map(|e| mlm_mask(e, vocab.len(), cfg.mask_prob, &mut mask_rng))
            .collect::<Result<_>>()?;
        let train = masked.split_off(n_held);
        Ok(Self {
            train,
            heldout: masked,
            stats,
        })
    }

    /// JSON lines: a header record, then one record per example.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let header = CacheHeader {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            stats: self.stats.clone(),
        };
        let mut put = |v: String| writeln!(f, "{v}").map_err(|e| Error::io(path, e));
        put(serde_json::to_string(&header).map_err(|e| Error::Internal(e.to_string()))?)?;
        for (heldout, set) in [(true, &self.heldout), (false, &self.train)] {
            for e in set {
                let rec = CacheRecord {
                    heldout,
                    example: e.clone(),
                };
                put(serde_json::to_string(&rec).map_err(|e| Error::Internal(e.to_string()))?)?;
            }
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let bad = |line: usize, msg: String| Error::Input(format!("{}:{line}: {msg}", path.display()));
        let first = lines
            .next()
            .ok_or_else(|| bad(1, "empty cache file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: CacheHeader = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
        if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
            return Err(bad(
                1,
                format!("unsupported cache {} v{}", header.format, header.version),
            ));
        }
        let mut out = Self {
            train: Vec::new(),
            heldout: Vec::new(),
            stats: header.stats,
        };
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?;
            if rec.heldout {
                out.heldout.push(rec.example);
            } else {
                out.train.push(rec.example);
            }
        }
        Ok(out)
    }
}

/// MLM cross-entropy over `positions` (row indices of `logits`) only.
pub fn masked_lm_loss(g: &mut Graph, logits: Var, positions: &[usize], targets: &[usize]) -> Result<Var> {
    let picked = g.rows(logits, positions)?;
    g.cross_entropy(picked, targets, &vec![1.0; targets.len()])
}

/// Per-batch losses on one graph.
struct PretrainLosses {
    mlm: Var,
    nsp: Var,
    total: Var,
}

fn pretrain_losses(
    model: &Encoder,
    g: &mut Graph,
    p: &Bound,
    batch: &[&PretrainExample],
    training: bool,
    rng: &mut SeedRng,
) -> Result<PretrainLosses> {
    let seqs: Vec<(&[usize], Option<&[usize]>)> = batch
        .iter()
        .map(|e| (&e.token_ids[..], Some(&e.segment_ids[..])))
        .collect();
    let b = EncoderBatch::from_sequences(&seqs)?;
    let hs = model.hidden_states(g, p, &b, training, rng)?;

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (i, e) in batch.iter().enumerate() {
        for &(pos, id) in &e.mlm_targets {
            rows.push(i * b.seq + pos);
            targets.push(id);
        }
    }
    if rows.is_empty() {
        return Err(Error::Input("pretraining batch has no masked targets".into()));
    }
    let h = model.config.hidden;
    let x = g.rows(hs, &rows)?;
    let x = g.matmul(x, p.var("pretrain.mlm.dense.weight")?)?;
    let x = g.add_bias(x, p.var("pretrain.mlm.dense.bias")?)?;
    let x = g.gelu(x);
    let x = g.layer_norm(x, p.var("pretrain.mlm.ln.gamma")?, p.var("pretrain.mlm.ln.beta")?, model.config.layer_norm_eps)?;
    // Decoder shares the token embedding table.
    let n = rows.len();
    let x = g.reshape(x, &[1, n, h])?;
    let table = g.reshape(p.var("emb.token")?, &[1, model.config.vocab_size, h])?;
    let logits = g.batch_matmul(x, table, true)?;
    let logits = g.reshape(logits, &[n, model.config.vocab_size])?;
    let logits = g.add_bias(logits, p.var("pretrain.mlm.bias")?)?;
    let positions: Vec<usize> = (0..n).collect();
    let mlm = masked_lm_loss(g, logits, &positions, &targets)?;

    let cls: Vec<usize> = (0..b.batch).map(|i| i * b.seq).collect();
    let pooled = g.rows(hs, &cls)?;
    let nsp_logits = g.matmul(pooled, p.var("pretrain.nsp.weight")?)?;
    let nsp_logits = g.add_bias(nsp_logits, p.var("pretrain.nsp.bias")?)?;
    let labels: Vec<usize> = batch.iter().map(|e| usize::from(e.is_next)).collect();
    let nsp = g.cross_entropy(nsp_logits, &labels, &vec![1.0; labels.len()])?;
    let total = g.add(mlm, nsp)?;
    Ok(PretrainLosses { mlm, nsp, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mlm: f64,
    pub nsp: f64,
    pub total: f64,
}

/// Mean losses over `examples` in inference mode, weighting each batch by
/// its size. The model must carry pretraining heads.
pub fn evaluate_pretrain_loss(model: &Encoder, examples: &[PretrainExample], batch_size: usize) -> Result<LossParts> {
    if examples.is_empty() {
        return Err(Error::Input("no examples to evaluate".into()));
    }
    let mut acc = LossParts {
        mlm: 0.0,
        nsp: 0.0,
        total: 0.0,
    };
    let mut rng = SeedRng::new(0);
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&PretrainExample> = chunk.iter().collect();
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, |_| false);
        let l = pretrain_losses(model, &mut g, &p, &refs, false, &mut rng)?;
        let w = chunk.len() as f64;
        acc.mlm += w * g.value(l.mlm).item()?;
        acc.nsp += w * g.value(l.nsp).item()?;
        acc.total += w * g.value(l.total).item()?;
    }
    let n = examples.len() as f64;
    Ok(LossParts {
        mlm: acc.mlm / n,
        nsp: acc.nsp / n,
        total: acc.total / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    /// 0 is the state before any update.
    pub epoch: usize,
    pub train: Option<LossParts>,
    pub heldout: LossParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub encoder: Encoder,
    pub log: Vec<PretrainRecord>,
}

impl PretrainOutcome {
    /// `epoch,train_mlm,train_nsp,train_total,heldout_mlm,heldout_nsp,heldout_total`.
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("epoch,train_mlm,train_nsp,train_total,heldout_mlm,heldout_nsp,heldout_total\n");
        for r in &self.log {
            let t = r.train.map_or(",,".to_string(), |t| format!("{},{},{}", t.mlm, t.nsp, t.total));
            s.push_str(&format!(
                "{},{t},{},{},{}\n",
                r.epoch, r.heldout.mlm, r.heldout.nsp, r.heldout.total
            ));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Joint MLM + NSP training of the encoder body. The result keeps its
/// pretraining heads and is tagged task-adapted.
pub fn pretrain(mut model: Encoder, corpus: &PretrainCorpus, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if corpus.train.is_empty() || corpus.heldout.is_empty() {
        return Err(Error::Input("pretraining needs non-empty training and held-out sets".into()));
    }
    let parent = model.digest();
    let root = SeedRng::new(cfg.seed).fork_named("pretrain");
    model.add_pretrain_heads(cfg.seed)?;
    let is_trainable = |n: &str| !n.starts_with(crate::model::encoder::HEAD_PREFIX);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut log = vec![PretrainRecord {
        epoch: 0,
        train: None,
        heldout: evaluate_pretrain_loss(&model, &corpus.heldout, cfg.batch_size)?,
    }];
    log::info!("pretrain epoch 0: held-out mlm {:.4}", log[0].heldout.mlm);
    for epoch in 1..=cfg.epochs {
        let e = epoch as u64;
        let examples: Vec<PretrainExample> = if cfg.dynamic_masking && epoch > 1 {
            let mut r = root.fork(3 * e);
            corpus
                .train
                .iter()
                .map(|x| mlm_mask(x, model.config.vocab_size, cfg.mask_prob, &mut r))
                .collect::<Result<_>>()?
        } else {
            corpus.train.clone()
        };
        let mut order: Vec<usize> = (0..examples.len()).collect();
        root.fork(3 * e + 1).shuffle(&mut order);
        let mut drop_rng = root.fork(3 * e + 2);
        let mut sums = [0.0; 3];
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&PretrainExample> = idx.iter().map(|&i| &examples[i]).collect();
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, is_trainable);
            let l = pretrain_losses(&model, &mut g, &p, &batch, true, &mut drop_rng)?;
            let w = idx.len() as f64;
            sums[0] += w * g.value(l.mlm).item()?;
            sums[1] += w * g.value(l.nsp).item()?;
            sums[2] += w * g.value(l.total).item()?;
            g.backward(l.total)?;
            let grads = p.grads(&g);
            opt.step(&mut model.params, &grads, cfg.learning_rate)?;
        }
        let n = examples.len() as f64;
        let heldout = evaluate_pretrain_loss(&model, &corpus.heldout, cfg.batch_size)?;
        log::info!("pretrain epoch {epoch}: train total {:.4} held-out mlm {:.4}", sums[2] / n, heldout.mlm);
        log.push(PretrainRecord {
            epoch,
            train: Some(LossParts {
                mlm: sums[0] / n,
                nsp: sums[1] / n,
                total: sums[2] / n,
            }),
            heldout,
        });
    }
    model.provenance = Provenance {
        stage: Stage::TaskAdapted,
        seed: cfg.seed,
        epoch: Some(cfg.epochs),
        parent: Some(parent),
    };
    Ok(PretrainOutcome { encoder: model, log })
}

/// Warm-start from an adapted body: pretraining heads are dropped and a
/// fresh head for `subtask` is attached before supervised training.
pub fn fine_tune(
    adapted: &Encoder,
    train: &[TokenizedExample],
    dev: &[TokenizedExample],
    subtask: Subtask,
    cfg: &TrainConfig,
) -> Result<(Encoder, RunHistory)> {
    if adapted.provenance.stage != Stage::TaskAdapted {
        log::warn!(
            "fine-tuning from a {} checkpoint, expected a task-adapted one",
            adapted.provenance.stage
        );
    }
    let mut model = warm_start(adapted, subtask, cfg.seed)?;
    let history = train_encoder(&mut model, train, dev, subtask, cfg)?;
    Ok((model, history))
}

/// The adapted body with a fresh `subtask` head, before any update.
pub fn warm_start(adapted: &Encoder, subtask: Subtask, seed: u64) -> Result<Encoder> {
    let mut model = adapted.clone();
    model.strip_pretrain_heads();
    model.replace_head(subtask.arity(), seed)?;
    Ok(model)
}

/// Summary counts for a prepared corpus, handy for manifests.
pub fn corpus_summary(c: &PretrainCorpus) -> BTreeMap<String, usize> {
    BTreeMap::from([
        ("input_docs".to_string(), c.stats.input_docs),
        ("kept_docs".to_string(), c.stats.kept_docs),
        ("train_pairs".to_string(), c.train.len()),
        ("heldout_pairs".to_string(), c.heldout.len()),
        ("mlm_targets".to_string(), c.train.iter().chain(&c.heldout).map(|e| e.mlm_targets.len()).sum()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;
    use crate::tensor::Tensor;
    use crate::text::build_vocab;

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("I agree."), vec!["I agree."]);
        assert_eq!(split_sentences("She said no. He left."), vec!["She said no.", "He left."]);
        assert_eq!(split_sentences("v1.2 is out!! Great"), vec!["v1.2 is out!!", "Great"]);
        assert_eq!(split_sentences("... ?! ok"), vec!["ok"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn filter_keeps_only_multi_sentence_docs_and_is_idempotent() {
        let docs = ["I agree.", "She said no. He left.", "", "One. Two? Three!"];
        let (kept, stats) = prepare_pretrain_corpus(&docs);
        assert_eq!(kept.len(), 2);
        assert_eq!(stats.kept_sentences, 5);
        let joined: Vec<String> = kept.iter().map(|d| d.join(" ")).collect();
        assert_eq!(prepare_pretrain_corpus(&joined).0, kept);
    }

    fn docs() -> Vec<Vec<String>> {
        (0..6)
            .map(|d| (0..4).map(|s| format!("doc {d} sentence {s}.")).collect())
            .collect()
    }

    #[test]
    fn nsp_pairs() {
        let all_next = make_nsp_pairs(&docs(), 1.0, &mut SeedRng::new(1)).unwrap();
        assert!(all_next.iter().all(|p| p.is_next));
        assert_eq!(all_next.len(), 18);
        let mixed = make_nsp_pairs(&docs(), 0.5, &mut SeedRng::new(1)).unwrap();
        for p in mixed.iter().filter(|p| !p.is_next) {
            let truth = all_next.iter().find(|t| t.first == p.first).unwrap();
            assert_ne!(p.second, truth.second);
        }
        assert_eq!(make_nsp_pairs(&docs()[..1], 0.5, &mut SeedRng::new(1)).unwrap_err().category(), "input");
    }

    #[test]
    fn masking_respects_framing() {
        let (vocab, _) = build_vocab(&["a b c d e f g h"], 50, 1).unwrap();
        let pair = SentencePair {
            first: "a b c d".into(),
            second: "e f g h".into(),
            is_next: true,
        };
        let framed = PretrainExample::frame(&pair, &vocab, 16).unwrap();
        assert_eq!(framed.segment_ids, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let mut rng = SeedRng::new(3);
        for _ in 0..1000 {
            let m = mlm_mask(&framed, vocab.len(), 0.15, &mut rng).unwrap();
            assert!(!m.mlm_targets.is_empty());
            for &(p, id) in &m.mlm_targets {
                assert!(framed.token_ids[p] != CLS && framed.token_ids[p] != SEP);
                assert_eq!(framed.token_ids[p], id);
            }
            assert_eq!(m.unmasked(), framed);
        }
        let forced = mlm_mask(&framed, vocab.len(), 0.0, &mut rng).unwrap();
        assert_eq!(forced.mlm_targets.len(), 1);
    }

    #[test]
    fn symmetric_truncation() {
        let (vocab, _) = build_vocab(&["a b c d e f g h i j"], 50, 1).unwrap();
        let pair = SentencePair {
            first: "a b c d e f g".into(),
            second: "h i".into(),
            is_next: false,
        };
        let f = PretrainExample::frame(&pair, &vocab, 8).unwrap();
        assert_eq!(f.token_ids.len(), 8);
        assert_eq!(f.segment_ids.iter().filter(|&&s| s == 1).count(), 3);
    }

    #[test]
    fn mlm_loss_ignores_non_target_rows() {
        let mut data: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![4, 5], data.clone()).unwrap());
        let a = masked_lm_loss(&mut g, l, &[1, 3], &[2, 4]).unwrap();
        for r in [0, 2] {
            data[r * 5..(r + 1) * 5].fill(0.0);
        }
        let l2 = g.constant(Tensor::new(vec![4, 5], data).unwrap());
        let b = masked_lm_loss(&mut g, l2, &[1, 3], &[2, 4]).unwrap();
        assert_eq!(g.value(a).item().unwrap(), g.value(b).item().unwrap());
    }

    #[test]
    fn pretraining_runs_and_logs_additive_losses() {
        let lines: Vec<String> = (0..60)
            .map(|i| format!("the cat {} sat. the dog {} ran. birds sing {}.", i % 5, i % 7, i % 3))
            .collect();
        let (vocab, _) = build_vocab(&lines, 100, 1).unwrap();
        let cfg = PretrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 2,
            heldout_fraction: 0.1,
            ..PretrainConfig::default()
        };
        let corpus = PretrainCorpus::build(&lines, &vocab, 24, &cfg).unwrap();
        let model = Encoder::init(
            EncoderConfig {
                vocab_size: vocab.len(),
                hidden: 16,
                layers: 1,
                heads: 2,
                ffn: 32,
                max_len: 24,
                ..EncoderConfig::default()
            },
            0,
        )
        .unwrap();
        let out = pretrain(model, &corpus, &cfg).unwrap();
        assert_eq!(out.log.len(), 3);
        for r in &out.log {
            assert!((r.heldout.mlm + r.heldout.nsp - r.heldout.total).abs() < 1e-6);
        }
        assert!(out.log[2].heldout.mlm < out.log[0].heldout.mlm);
        assert_eq!(out.encoder.provenance.stage, Stage::TaskAdapted);

        let warm = warm_start(&out.encoder, Subtask::C, 4).unwrap();
        assert_eq!(warm.config.head_classes, 11);
        for (name, t) in warm.params.iter().filter(|(n, _)| Encoder::is_body(n)) {
            assert_eq!(out.encoder.params.get(name).unwrap(), t);
        }
        assert!(!warm.has_pretrain_heads());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        corpus.save_cache(&path).unwrap();
        assert_eq!(PretrainCorpus::load_cache(&path).unwrap(), corpus);
    }
}
