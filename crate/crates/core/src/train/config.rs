use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::ArchitectureConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Stage 1: fit the label constructor to the original labels.
    Clc,
    /// Stage 2: train the single-frame student.
    Deweather,
}

/// Every knob of one training run. Deserializes from JSON with defaults for
/// missing fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    /// Square crop side in pixels.
    pub patch: usize,
    /// Optimizer steps per epoch; `None` means one pass over the training
    /// split, `max(1, train_scenes / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub lr_warm_start: f64,
    pub lr_peak: f64,
    pub lr_floor: f64,
    pub warmup_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossWeights,
    pub arch: ArchitectureConfig,
    /// Registered supervision mode for the student stage.
    pub supervision: String,
    /// Save a snapshot checkpoint every this many epochs (and at epoch 0);
    /// 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Clc,
            epochs: 30,
            batch_size: 4,
            patch: 96,
            steps_per_epoch: None,
            lr_warm_start: 5e-5,
            lr_peak: 2e-4,
            lr_floor: 1e-6,
            warmup_fraction: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossWeights::default(),
            arch: ArchitectureConfig::default(),
            supervision: "pseudo_and_original".into(),
            snapshot_every: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_floor < self.lr_warm_start && self.lr_warm_start < self.lr_peak) {
            return Err(Error::Config(format!(
                "learning rates must satisfy lr_floor < lr_warm_start < lr_peak, got {} / {} / {}",
                self.lr_floor, self.lr_warm_start, self.lr_peak
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::Config(
                "epochs, batch_size and steps_per_epoch must be positive".into(),
            ));
        }
        if self.stage == Stage::Deweather && self.batch_size < 2 {
            return Err(Error::Config(format!(
                "the student stage needs batch_size ≥ 2 for contrastive negatives, got {}",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return Err(Error::Config(
                "Adam needs betas in [0, 1) and eps > 0".into(),
            ));
        }
        self.arch.validate()?;
        self.loss.validate()?;
        let m = self.arch.size_multiple();
        if self.patch == 0 || !self.patch.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "patch {} must be a positive multiple of {m}",
                self.patch
            )));
        }
        let min = self.loss.msssim().min_size();
        if self.patch < min {
            return Err(Error::Config(format!(
                "patch {} is below the {min} px needed by {}-scale MS-SSIM",
                self.patch, self.loss.msssim_scales
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}
