//! Adam and plain SGD updates over flat parameter slices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    /// Plain gradient descent; exists to make mixing identities exactly checkable.
    Sgd,
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Number of completed `begin_step` calls; Adam bias correction uses it.
    pub step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, step: 0 }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates `param` in place from `grad`. `m`/`v` are only touched by Adam.
    pub fn update(&self, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                adam_step(param, grad, m, v, self.step.max(1), self.lr, beta1, beta2, eps)
            }
            OptimizerKind::Sgd => sgd_step(param, grad, self.lr),
        }
    }
}

/// Bias-corrected Adam update at (1-based) step `t`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    debug_assert!(param.len() == grad.len() && grad.len() == m.len() && m.len() == v.len());
    let t = t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

pub fn sgd_step(param: &mut [f64], grad: &[f64], lr: f64) {
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}
