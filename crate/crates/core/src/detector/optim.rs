use std::f64::consts::PI;

use super::model::Grads;
use super::params::ModelParams;
use crate::{Error, Result};

/// SGD with Nesterov momentum. Weight decay applies to conv/head kernels only.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Clears momentum buffers, e.g. when the trainable set changes.
    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    /// Tensors with an empty gradient or a frozen flag are not touched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads, lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} tensors",
                grads.len(),
                params.len()
            )));
        }
        if self.velocity.len() != params.len() {
            self.velocity = vec![Vec::new(); params.len()];
        }
        for (i, g) in grads.iter().enumerate() {
            let t = params.get(i);
            if g.is_empty() || !t.trainable() {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!("non-finite gradient for {}", t.name)));
            }
            let wd = if t.decays() { self.weight_decay } else { 0.0 };
            let v = &mut self.velocity[i];
            if v.len() != g.len() {
                *v = vec![0.0; g.len()];
            }
            let mu = self.momentum;
            let p = params.data_mut(i);
            for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                let d = g + wd * *p;
                *v = mu * *v + d;
                *p -= lr * (d + mu * *v);
            }
        }
        Ok(())
    }
}

/// Linear warm-up followed by cosine decay to `final_frac * base`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub final_frac: f64,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self {
            base,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
            final_frac: 0.1,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.base * (self.final_frac + (1.0 - self.final_frac) * 0.5 * (1.0 + (PI * t).cos()))
    }
}
