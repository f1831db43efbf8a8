use std::collections::BTreeMap;

use super::config::OptimizerConfig;
use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Adam without weight decay. Updated values are rounded to `f32`.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", format!("{name}: {:?} vs {:?}", p.shape(), g.shape())));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let step = self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *x = (*x - step) as f32 as f64;
            }
        }
        Ok(())
    }
}
