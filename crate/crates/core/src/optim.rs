//! Adaptive-moment gradient descent over a [`Model`]'s tensors.

use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(model: &Model, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.data().len()])
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update of `model` along `grad`.
    pub fn step(&mut self, model: &mut Model, grad: &Model) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let grads = grad.tensors();
        for (k, p) in model.tensors_mut().into_iter().enumerate() {
            let g = grads[k].1.data();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (e, w) in p.data_mut().iter_mut().enumerate() {
                m[e] = c.beta1 * m[e] + (1.0 - c.beta1) * g[e];
                v[e] = c.beta2 * v[e] + (1.0 - c.beta2) * g[e] * g[e];
                let mhat = m[e] / bc1;
                let vhat = v[e] / bc2;
                *w -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}
