//! First-order update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradientBundle, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Sgd,
    SgdNesterov,
    Adam,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub rule: Rule,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            rule: Rule::Adam,
            learning_rate: 1e-4,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerSpec {
    pub fn new(rule: Rule, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            rule,
            learning_rate,
            weight_decay,
            ..Self::default()
        }
    }
}

/// Moment buffers and step count for one parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub spec: OptimizerSpec,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec, params: &ModelParams) -> Self {
        let n = params.param_count();
        let second = match spec.rule {
            Rule::Adam | Rule::Adamw => vec![0.0; n],
            Rule::Sgd | Rule::SgdNesterov => Vec::new(),
        };
        Self {
            spec,
            first: vec![0.0; n],
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientBundle) -> Result<()> {
        let g = grads.flatten();
        let mut theta = params.flatten();
        if g.len() != theta.len() || theta.len() != self.first.len() {
            return Err(Error::shape(
                "OptimizerState::step",
                format!(
                    "{} gradients, {} parameters, {} buffer slots",
                    g.len(),
                    theta.len(),
                    self.first.len()
                ),
            ));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at parameter {i} on step {}",
                self.steps + 1
            )));
        }
        self.update(&mut theta, &g);
        params.set_flat(&theta)
    }

    fn update(&mut self, theta: &mut [f64], g: &[f64]) {
        self.steps += 1;
        let s = self.spec;
        let lr = s.learning_rate;
        match s.rule {
            Rule::Sgd | Rule::SgdNesterov => {
                let mu = if s.rule == Rule::SgdNesterov { s.momentum } else { 0.0 };
                for ((t, &gi), buf) in theta.iter_mut().zip(g).zip(&mut self.first) {
                    let gi = gi + s.weight_decay * *t;
                    let dir = if mu == 0.0 {
                        gi
                    } else {
                        *buf = mu * *buf + gi;
                        gi + mu * *buf
                    };
                    *t -= lr * dir;
                }
            }
            Rule::Adam | Rule::Adamw => {
                let decoupled = s.rule == Rule::Adamw;
                let bc1 = 1.0 - s.beta1.powf(self.steps as f64);
                let bc2 = 1.0 - s.beta2.powf(self.steps as f64);
                for (((t, &gi), m), v) in theta
                    .iter_mut()
                    .zip(g)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let gi = if decoupled {
                        *t *= 1.0 - lr * s.weight_decay;
                        gi
                    } else {
                        gi + s.weight_decay * *t
                    };
                    *m = s.beta1 * *m + (1.0 - s.beta1) * gi;
                    *v = s.beta2 * *v + (1.0 - s.beta2) * gi * gi;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *t -= lr * m_hat / (v_hat.sqrt() + s.eps);
                }
            }
        }
    }
}
