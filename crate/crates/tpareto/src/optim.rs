//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{GradientVector, GroupId, ParameterGroup};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Per-group Adam state. Weight decay is applied to the parameters
/// directly, not folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: OptimConfig,
    states: BTreeMap<GroupId, Moments>,
}

impl Adam {
    pub fn new(cfg: OptimConfig) -> Self {
        Self { cfg, states: BTreeMap::new() }
    }

    pub fn step(&mut self, group: &mut ParameterGroup, grad: &GradientVector) {
        debug_assert_eq!(group.id, grad.group);
        let dim = group.dim();
        assert_eq!(dim, grad.dim(), "gradient dim mismatch for {}", group.id);
        let state = self
            .states
            .entry(group.id)
            .or_insert_with(|| Moments { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 });
        state.t += 1;
        let t = state.t as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);

        let mut theta = group.flatten();
        for (((t, &g), m), v) in
            theta.iter_mut().zip(&grad.values).zip(&mut state.m).zip(&mut state.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *t -= self.cfg.lr * (m_hat / (v_hat.sqrt() + self.cfg.eps))
                + self.cfg.lr * self.cfg.weight_decay * *t;
        }
        group.set_from_flat(&theta);
    }
}
