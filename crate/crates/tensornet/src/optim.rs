use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64, weight_decay: f64 },
    Adam(AdamConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Adam(AdamConfig::default())
    }
}

impl OptimizerConfig {
    pub fn build(self) -> Optimizer {
        match self {
            Self::Sgd { lr, weight_decay } => Optimizer::Sgd(Sgd { lr, weight_decay }),
            Self::Adam(cfg) => Optimizer::Adam(Adam::new(cfg)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, params: Vec<&mut Tensor>) {
        match self {
            Self::Sgd(o) => o.step(params),
            Self::Adam(o) => o.step(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn step(&self, params: Vec<&mut Tensor>) {
        for p in params {
            let (data, grad) = p.data_and_grad_mut();
            for (w, g) in data.iter_mut().zip(grad.iter()) {
                *w -= self.lr * (g + self.weight_decay * *w);
            }
        }
    }
}

/// Adam with bias correction. Moment buffers are matched to parameters by
/// position, so the same parameter order must be passed on every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>) {
        if self.moments.len() != params.len() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
                .collect();
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (p, (m, v)) in params.into_iter().zip(self.moments.iter_mut()) {
            let (data, grad) = p.data_and_grad_mut();
            for i in 0..data.len() {
                let g = grad[i] + weight_decay * data[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
