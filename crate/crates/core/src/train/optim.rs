//! Adam with decoupled bookkeeping of the L2 penalty on convolution kernels.

use serde::{Deserialize, Serialize};

use crate::nn::{Param, ParamKind, ResUNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Whether the L2 penalty applies to a parameter.
pub fn is_regularized(p: &Param) -> bool {
    p.kind == ParamKind::ConvKernel
}

/// `l2 * sum(w^2)` over convolution kernels.
pub fn l2_penalty(net: &ResUNet, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let s: f64 = net
        .params()
        .into_iter()
        .filter(|p| is_regularized(p))
        .map(|p| p.value.iter().map(|&w| (w as f64) * (w as f64)).sum::<f64>())
        .sum();
    l2 * s
}

/// Adam state for one network; moment buffers follow `ResUNet::params` order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub l2: f64,
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &ResUNet, lr: f64, l2: f64, cfg: AdamConfig) -> Self {
        let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self {
            lr,
            l2,
            cfg,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients (adding `2 * l2 * w`
    /// for kernels), then clears the gradients.
    pub fn step(&mut self, net: &mut ResUNet) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, p) in net.params_mut().into_iter().enumerate() {
            let decay = if is_regularized(p) { 2.0 * self.l2 } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                let g = p.grad[j] as f64 + decay * p.value[j] as f64;
                let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let upd = self.lr * (mj / c1) / ((vj / c2).sqrt() + self.cfg.epsilon);
                p.value[j] = (p.value[j] as f64 - upd) as f32;
                p.grad[j] = 0.0;
            }
        }
    }
}
