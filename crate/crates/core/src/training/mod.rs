//! Optimizer, schedule, and the two training regimes: denoising adapter
//! pretraining and cross-attention fine-tuning.

mod adam;
mod log;
mod trainer;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, ParamAccess};
pub use log::{LogRecord, TrainLog};
pub use trainer::{
    accumulated_gradients, caft, caft_with_hook, dev_loss, pretrain_base, train_denoising_adapter, DenoisingData,
    Example, ParallelData, TrainOutcome,
};

use crate::corpus::NoiseConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Linear warmup, then `max_lr * sqrt(warmup / step)`.
    InverseSqrt,
    /// Linear warmup, then flat at `max_lr`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub warmup_steps: usize,
    pub max_lr: f64,
    pub schedule: ScheduleKind,
    /// Dev evaluations without improvement before stopping.
    pub early_stop_patience: usize,
    pub eval_interval: usize,
    /// Pass limit over the training data. Only cross-attention fine-tuning
    /// honours it; adapter pretraining cycles reshuffled epochs until
    /// `max_steps` or early stopping.
    pub epochs: usize,
    pub dev_fraction: f64,
    pub restore_best: bool,
    pub seed: u64,
    pub noise: NoiseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 100_000,
            batch_size: 8,
            grad_accum: 8,
            warmup_steps: 4000,
            max_lr: 2e-4,
            schedule: ScheduleKind::InverseSqrt,
            early_stop_patience: 5,
            eval_interval: 200,
            epochs: 1,
            dev_fraction: 0.1,
            restore_best: true,
            seed: 0,
            noise: NoiseConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("grad_accum", self.grad_accum),
            ("warmup_steps", self.warmup_steps),
            ("early_stop_patience", self.early_stop_patience),
            ("eval_interval", self.eval_interval),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config(format!("max_lr {} must be positive", self.max_lr)));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) || self.dev_fraction == 0.0 {
            return Err(Error::Config(format!(
                "dev_fraction {} not in (0,1)",
                self.dev_fraction
            )));
        }
        self.noise.validate()
    }
}

/// Learning rate for optimizer step `step` (the first update uses step 1).
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let (s, w) = (step as f64, cfg.warmup_steps as f64);
    if step < cfg.warmup_steps {
        return cfg.max_lr * s / w;
    }
    match cfg.schedule {
        ScheduleKind::InverseSqrt => cfg.max_lr * (w / s).sqrt(),
        ScheduleKind::Constant => cfg.max_lr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reference_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.0);
        assert!((lr_schedule(4000, &cfg) - 2e-4).abs() < 1e-12);
        assert!((lr_schedule(16000, &cfg) - 1e-4).abs() < 1e-12);
        assert!((lr_schedule(2000, &cfg) - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn constant_after_warmup() {
        let cfg = TrainConfig {
            schedule: ScheduleKind::Constant,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(50_000, &cfg), 2e-4);
    }

    #[test]
    fn defaults_validate() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            max_lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
