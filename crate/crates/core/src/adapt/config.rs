use serde::{Deserialize, Serialize};

use crate::domainmix::MixConfig;
use crate::{Error, Result};

/// Supervised training on labeled source data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 means one pass over the training split.
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Linear warm-up length in epochs (may be fractional).
    pub warmup_epochs: f64,
    /// Images held out from the end of the source set for checkpoint selection.
    pub val_size: usize,
    /// Random horizontal flips.
    pub hflip: bool,
    /// Probability that a batch element is a 2x2 collage of source images,
    /// composed at the input size (objects shrink).
    pub mosaic: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            steps_per_epoch: 0,
            batch_size: 16,
            lr: 0.01,
            momentum: 0.937,
            weight_decay: 5e-4,
            warmup_epochs: 3.0,
            val_size: 50,
            hflip: true,
            mosaic: 0.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("lr must be positive, momentum in [0,1), weight_decay >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mosaic) {
            return Err(Error::Config(format!("mosaic probability {} outside [0,1]", self.mosaic)));
        }
        if self.warmup_epochs < 0.0 {
            return Err(Error::Config("warmup_epochs must be >= 0".into()));
        }
        Ok(())
    }
}

/// Schedule and flags for adaptation. `w` is the epoch at which Phase 2
/// (full fine-tuning) begins; epochs are numbered from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub w: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 means one pass over the source split.
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub use_tg: bool,
    pub use_dmx: bool,
    pub use_ga: bool,
    pub use_ft: bool,
    pub conf_threshold: f64,
    pub val_size: usize,
    pub mix: MixConfig,
    pub rng_seed: u64,
}

impl AdaptConfig {
    /// Full method with `w = max(1, epochs / 5)`.
    pub fn new(epochs: usize, canvas: usize) -> Self {
        Self {
            w: (epochs / 5).max(1),
            epochs,
            steps_per_epoch: 0,
            batch_size: 16,
            lr: 1e-3,
            momentum: 0.937,
            weight_decay: 5e-4,
            warmup_epochs: 0.5,
            use_tg: true,
            use_dmx: true,
            use_ga: true,
            use_ft: true,
            conf_threshold: 0.4,
            val_size: 50,
            mix: MixConfig::new(canvas),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_ga && self.use_ft && self.w >= self.epochs {
            return Err(Error::Config(format!(
                "warm-up epochs w={} must be below total epochs T={}",
                self.w, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("lr must be positive, momentum in [0,1), weight_decay >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::Config(format!("conf_threshold {} outside [0,1]", self.conf_threshold)));
        }
        self.mix.validate()
    }

    pub(crate) fn train_view(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs,
            val_size: self.val_size,
            hflip: false,
            mosaic: 0.0,
            rng_seed: self.rng_seed,
        }
    }
}
