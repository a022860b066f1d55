use ndarray::{Array2, Zip};

use super::params::{Gradients, ParameterSet};
use crate::error::{Error, Result};

/// Scales all gradients by `max_norm / g` when their global L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm.is_finite() && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with a Nesterov look-ahead on the first moment (constant β1).
#[derive(Debug, Clone, PartialEq)]
pub struct Nadam {
    pub config: NadamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Nadam {
    pub fn new(params: &ParameterSet, config: NadamConfig) -> Self {
        let zeros = |p: &ParameterSet| p.iter().map(|(_, v)| Array2::zeros(v.dim())).collect();
        Nadam {
            config,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Restores a saved state; shapes must mirror `params`.
    pub fn from_state(
        params: &ParameterSet,
        config: NadamConfig,
        step: u64,
        m: Vec<Array2<f64>>,
        v: Vec<Array2<f64>>,
    ) -> Result<Self> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        for ((name, p), (a, b)) in params.iter().zip(m.iter().zip(&v)) {
            if a.dim() != p.dim() || b.dim() != p.dim() {
                return Err(Error::Checkpoint(format!("optimizer state shape mismatch for `{name}`")));
            }
        }
        Ok(Nadam { config, step, m, v })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) {
        let NadamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let m_corr = b1 / (1.0 - b1.powi(t + 1));
        let g_corr = (1.0 - b1) / (1.0 - b1.powi(t));
        let v_corr = 1.0 / (1.0 - b2.powi(t));
        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = m_corr * *m + g_corr * g;
                let v_hat = v_corr * *v;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}
