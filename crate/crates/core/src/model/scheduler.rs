//! Reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Minimum decrease that counts as an improvement.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 5,
            threshold: 0.0,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.factor > 0.0 && self.factor < 1.0)
            || self.patience == 0
            || !(self.threshold >= 0.0)
        {
            return Err(ModelError::Config(format!(
                "invalid plateau scheduler {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: PlateauConfig) -> Self {
        Self {
            config,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records a validation loss; returns true when the rate was reduced.
    pub fn step(&mut self, metric: f64) -> bool {
        if metric < self.best - self.config.threshold {
            self.best = metric;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.config.patience {
            self.lr *= self.config.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}
