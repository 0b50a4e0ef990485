use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments and step counter, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One bias-corrected update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::invalid("adam", format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let gi = gi as f64;
                let m_new = ADAM_BETA1 * *mi as f64 + (1.0 - ADAM_BETA1) * gi;
                let v_new = ADAM_BETA2 * *vi as f64 + (1.0 - ADAM_BETA2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + ADAM_EPS);
                *pi = (*pi as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 5,
            factor: 0.1,
            min_delta: 1e-4,
            min_lr: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub lr: f64,
    /// Best monitored value so far; `None` before the first epoch.
    pub best: Option<f64>,
    /// Epochs since the last improvement.
    pub wait: usize,
}

impl PlateauState {
    pub fn new(lr: f64) -> Self {
        PlateauState { lr, best: None, wait: 0 }
    }

    /// Records one epoch's validation loss and returns the learning rate for
    /// the next epoch. After `patience` epochs without an improvement larger
    /// than `min_delta`, the rate is multiplied by `factor` (never below
    /// `min_lr`) and the wait counter restarts.
    pub fn observe(&mut self, value: f64, cfg: &PlateauConfig) -> f64 {
        match self.best {
            Some(best) if value >= best - cfg.min_delta => {
                self.wait += 1;
                if self.wait >= cfg.patience {
                    self.lr = (self.lr * cfg.factor).max(cfg.min_lr);
                    self.wait = 0;
                }
            }
            _ => {
                self.best = Some(value);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying `history` from `initial_lr`.
pub fn reduce_lr_on_plateau(history: &[f64], initial_lr: f64, cfg: &PlateauConfig) -> f64 {
    let mut state = PlateauState::new(initial_lr);
    for &v in history {
        state.observe(v, cfg);
    }
    state.lr
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f32) -> ParamStore {
        [("w".to_string(), Tensor::full([3], v))].into_iter().collect()
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = store(1.5);
        let mut adam = Adam::new();
        let grads = [("w".to_string(), Tensor::full([3], 2.0))].into_iter().collect();
        adam.step(&mut p, &grads, 1e-3).unwrap();
        let before = p.clone();
        let m_before = adam.m["w"].data()[0];
        let zero = [("w".to_string(), Tensor::zeros([3]))].into_iter().collect();
        adam.step(&mut p, &zero, 0.0).unwrap();
        assert_eq!(p, before);
        assert!(adam.m["w"].data()[0] < m_before);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut p = store(0.0);
        let mut adam = Adam::new();
        let grads = [("w".to_string(), Tensor::new([3], vec![0.3, -2.0, 5.0]).unwrap())].into_iter().collect();
        adam.step(&mut p, &grads, 1e-2).unwrap();
        let expected = [-1e-2, 1e-2, -1e-2];
        for (a, b) in p.get("w").unwrap().data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = store(0.0);
        let grads = [("w".to_string(), Tensor::zeros([4]))].into_iter().collect();
        assert!(Adam::new().step(&mut p, &grads, 1e-3).is_err());
    }

    #[test]
    fn plateau_rules() {
        let cfg = PlateauConfig::default();
        let improving: Vec<f64> = (0..20).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(reduce_lr_on_plateau(&improving, 1e-4, &cfg), 1e-4);
        let flat = vec![0.5; cfg.patience + 1];
        assert!((reduce_lr_on_plateau(&flat, 1e-4, &cfg) - 1e-5).abs() < 1e-18);
        assert_eq!(reduce_lr_on_plateau(&flat[..cfg.patience], 1e-4, &cfg), 1e-4);
        let long = vec![0.5; 200];
        assert_eq!(reduce_lr_on_plateau(&long, 1e-4, &cfg), 1e-6);
    }
}
