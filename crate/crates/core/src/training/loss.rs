use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Per-class loss multipliers, normalized to sum to the class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }
}

/// Inverse-frequency weights: `w_c = N / (M · n_c)`, then rescaled so the
/// weights sum to `M`. Rarer classes get larger weights.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    let m = counts.len();
    if m < 2 {
        return Err(Error::Input(format!("class weights need at least 2 classes, got {m}")));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Input(format!("class {c} has no examples; cannot weight it")));
    }
    let total: usize = counts.iter().sum();
    let raw: Vec<f64> = counts.iter().map(|&n| total as f64 / (m as f64 * n as f64)).collect();
    let scale = m as f64 / raw.iter().sum::<f64>();
    Ok(ClassWeights(raw.into_iter().map(|w| w * scale).collect()))
}

/// Cross-entropy over softmax of `logits`, each instance scaled by the
/// weight of its target class and reduced as `Σ wᵢ·ceᵢ / Σ wᵢ`.
pub fn weighted_cross_entropy(g: &mut Graph, logits: Var, targets: &[usize], weights: Option<&ClassWeights>) -> Result<Var> {
    let per_instance: Vec<f64> = match weights {
        None => vec![1.0; targets.len()],
        Some(w) => {
            let classes = g.value(logits).shape().last().copied().unwrap_or(0);
            if w.0.len() != classes {
                return Err(Error::Dimension(format!(
                    "{} class weights for {classes} logits",
                    w.0.len()
                )));
            }
            targets
                .iter()
                .map(|&t| w.0.get(t).copied().ok_or_else(|| Error::Input(format!("target {t} out of range"))))
                .collect::<Result<_>>()?
        }
    };
    g.cross_entropy(logits, targets, &per_instance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn weight_examples() {
        assert_eq!(class_weights(&[10, 10]).unwrap().values(), &[1.0, 1.0]);
        let w = class_weights(&[30, 10]).unwrap();
        assert!((w.values()[0] - 0.5).abs() < 1e-12 && (w.values()[1] - 1.5).abs() < 1e-12);
        assert_eq!(class_weights(&[3, 0]).unwrap_err().category(), "input");
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![1, 2], vec![0.0, -800.0]).unwrap());
        let loss = weighted_cross_entropy(&mut g, l, &[0], None).unwrap();
        assert_eq!(g.value(loss).item().unwrap(), 0.0);
    }

    #[test]
    fn uniform_weights_are_bitwise_neutral() {
        let logits = Tensor::new(vec![3, 2], vec![0.3, -1.2, 2.0, 0.1, -0.4, 0.9]).unwrap();
        let mut g = Graph::new();
        let l = g.constant(logits);
        let a = weighted_cross_entropy(&mut g, l, &[0, 1, 1], None).unwrap();
        let w = class_weights(&[7, 7]).unwrap();
        let b = weighted_cross_entropy(&mut g, l, &[0, 1, 1], Some(&w)).unwrap();
        assert_eq!(g.value(a).item().unwrap().to_bits(), g.value(b).item().unwrap().to_bits());
    }
}
