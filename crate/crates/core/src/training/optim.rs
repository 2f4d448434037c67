use crate::error::{Error, Result};
use crate::numcore::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub names: Vec<String>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub weight_decay: f64,
    /// Per-block learning-rate multipliers, 1.0 unless set.
    pub lr_multipliers: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &impl ParamSet, weight_decay: f64) -> Self {
        let blocks = params.blocks();
        Self {
            names: blocks.iter().map(|b| b.name.to_string()).collect(),
            m: blocks.iter().map(|b| vec![0.0; b.data.len()]).collect(),
            v: blocks.iter().map(|b| vec![0.0; b.data.len()]).collect(),
            step: 0,
            weight_decay,
            lr_multipliers: vec![1.0; blocks.len()],
        }
    }

    /// Sets the multiplier of every block whose name starts with `prefix`;
    /// returns how many blocks matched.
    pub fn set_group_lr(&mut self, prefix: &str, multiplier: f64) -> usize {
        let mut n = 0;
        for (name, m) in self.names.iter().zip(&mut self.lr_multipliers) {
            if name.starts_with(prefix) {
                *m = multiplier;
                n += 1;
            }
        }
        n
    }

    /// One update: `θ ← θ·(1 − lr·wd)`, then the bias-corrected moment step.
    pub fn apply(&mut self, params: &mut impl ParamSet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        let mut blocks = params.blocks_mut();
        if blocks.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} blocks, got {} params and {} gradients",
                self.m.len(),
                blocks.len(),
                grads.len()
            )));
        }
        for (k, ((name, theta), g)) in blocks.iter_mut().zip(grads).enumerate() {
            if theta.len() != self.m[k].len() || g.len() != theta.len() {
                return Err(Error::shape(format!("block {name} changed size")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (k, ((_, theta), g)) in blocks.iter_mut().zip(grads).enumerate() {
            let lr = lr * self.lr_multipliers[k];
            let decay = 1.0 - lr * self.weight_decay;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..theta.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
                theta[i] = theta[i] * decay - lr * update;
            }
        }
        Ok(())
    }
}
