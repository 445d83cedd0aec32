use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with decoupled weight decay. Moments are created lazily per tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every tensor named in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in `{name}` at element {i}")));
            }
        }
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let theta = params
                .get_mut(name)
                .ok_or_else(|| Error::Internal(format!("gradient for unknown tensor `{name}`")))?
                .data_mut();
            if theta.len() != g.len() {
                return Err(Error::Dimension(format!(
                    "gradient of `{name}` has {} elements, tensor has {}",
                    g.len(),
                    theta.len()
                )));
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for i in 0..g.len() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                theta[i] -= lr * weight_decay * theta[i];
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base · gamma^⌊epoch / step_size⌋`.
pub fn step_decay_lr(base_lr: f64, epoch: usize, step_size: usize, gamma: f64) -> f64 {
    base_lr * gamma.powi((epoch / step_size.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(v: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![v.len()], v.to_vec()).unwrap());
        p
    }

    fn grads(v: &[f64]) -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([("w".to_string(), v.to_vec())])
    }

    #[test]
    fn zero_gradient_no_decay_is_fixed_point() {
        let mut p = store(&[1.5, -2.0]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut p, &grads(&[0.0, 0.0]), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn first_step_is_minus_lr_sign() {
        let mut p = store(&[0.0]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut p, &grads(&[1.0]), 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn decay_only_recursion() {
        let mut p = store(&[2.0]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        });
        for _ in 0..3 {
            opt.step(&mut p, &grads(&[0.0]), 0.1).unwrap();
        }
        assert!((p.get("w").unwrap().data()[0] - 2.0 * 0.95f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = store(&[0.0]);
        let err = AdamW::default().step(&mut p, &grads(&[f64::NAN]), 0.1).unwrap_err();
        assert_eq!(err.category(), "numeric");
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn step_decay_examples() {
        let lrs: Vec<f64> = (0..6).map(|e| step_decay_lr(2e-5, e, 3, 0.5)).collect();
        assert_eq!(lrs, vec![2e-5, 2e-5, 2e-5, 1e-5, 1e-5, 1e-5]);
        assert_eq!(step_decay_lr(2e-5, 9, 3, 1.0), 2e-5);
    }
}
