use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;

/// Optimization schedule, loss weights and augmentation rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub decayed_lr: f64,
    /// Number of epochs trained at `base_lr`.
    pub decay_after: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub temperature: f64,
    pub lambda_con: f64,
    pub lambda_spec: f64,
    pub region_drop: f64,
    pub graph_drop: f64,
    pub token_mask: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            epochs: 50,
            base_lr: 5e-4,
            decayed_lr: 5e-5,
            decay_after: 15,
            batch_size: 128,
            margin: loss.margin,
            temperature: loss.temperature,
            lambda_con: loss.lambda_con,
            lambda_spec: loss.lambda_spec,
            region_drop: 0.35,
            graph_drop: 0.10,
            token_mask: 0.10,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            temperature: self.temperature,
            lambda_con: self.lambda_con,
            lambda_spec: self.lambda_spec,
        }
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_after {
            self.base_lr
        } else {
            self.decayed_lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch size {} below 2", self.batch_size)));
        }
        for (name, lr) in [("base_lr", self.base_lr), ("decayed_lr", self.decayed_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} = {lr} must be finite and nonnegative")));
            }
        }
        for (name, r) in [
            ("region_drop", self.region_drop),
            ("graph_drop", self.graph_drop),
            ("token_mask", self.token_mask),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} = {r} outside [0,1)")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight decay {} must be nonnegative", self.weight_decay)));
        }
        for (name, w) in [("lambda_con", self.lambda_con), ("lambda_spec", self.lambda_spec)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} = {w} must be nonnegative")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_switches_after_decay_epochs() {
        let c = TrainConfig::default();
        let lrs: Vec<f64> = (0..50).map(|e| c.lr_at(e)).collect();
        assert!(lrs[..15].iter().all(|&l| l == 5e-4));
        assert!(lrs[15..].iter().all(|&l| l == 5e-5));
    }

    #[test]
    fn rejects_bad_rates() {
        let mut c = TrainConfig::default();
        c.region_drop = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 1;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
