use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Subtask;

/// Shape and regularization of an encoder classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub attn_dropout: f64,
    pub hidden_dropout: f64,
    /// Dropout on the pooled vector in front of the classification head.
    pub classifier_dropout: f64,
    pub head_classes: usize,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            max_len: 64,
            attn_dropout: 0.1,
            hidden_dropout: 0.1,
            classifier_dropout: 0.1,
            head_classes: 2,
            init_std: 0.02,
            layer_norm_eps: 1e-12,
        }
    }
}

impl EncoderConfig {
    pub fn for_subtask(mut self, subtask: Subtask) -> Self {
        self.head_classes = subtask.arity();
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} attention heads",
                self.hidden, self.heads
            )));
        }
        if Subtask::from_arity(self.head_classes).is_none() {
            return Err(Error::Config(format!(
                "head_classes must be 2, 4 or 11, got {}",
                self.head_classes
            )));
        }
        for (name, p) in [
            ("attn_dropout", self.attn_dropout),
            ("hidden_dropout", self.hidden_dropout),
            ("classifier_dropout", self.classifier_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if !(self.init_std > 0.0) || !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("init_std and layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("vocab_size", self.vocab_size.to_string());
        put("hidden", self.hidden.to_string());
        put("layers", self.layers.to_string());
        put("heads", self.heads.to_string());
        put("ffn", self.ffn.to_string());
        put("max_len", self.max_len.to_string());
        put("attn_dropout", format!("{:?}", self.attn_dropout));
        put("hidden_dropout", format!("{:?}", self.hidden_dropout));
        put("classifier_dropout", format!("{:?}", self.classifier_dropout));
        put("head_classes", self.head_classes.to_string());
        put("init_std", format!("{:?}", self.init_std));
        put("layer_norm_eps", format!("{:?}", self.layer_norm_eps));
        m
    }

    pub(crate) fn from_kv(m: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(m: &BTreeMap<String, String>, k: &str) -> Result<T> {
            m.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("config key `{k}` missing")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("config key `{k}` is malformed")))
        }
        let c = Self {
            vocab_size: get(m, "vocab_size")?,
            hidden: get(m, "hidden")?,
            layers: get(m, "layers")?,
            heads: get(m, "heads")?,
            ffn: get(m, "ffn")?,
            max_len: get(m, "max_len")?,
            attn_dropout: get(m, "attn_dropout")?,
            hidden_dropout: get(m, "hidden_dropout")?,
            classifier_dropout: get(m, "classifier_dropout")?,
            head_classes: get(m, "head_classes")?,
            init_std: get(m, "init_std")?,
            layer_norm_eps: get(m, "layer_norm_eps")?,
        };
        c.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(c)
    }
}
