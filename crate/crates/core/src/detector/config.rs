use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    /// Output cells per side.
    pub grid: usize,
    /// Backbone block widths. The first `log2(input_size / grid)` blocks
    /// downsample by two; the rest keep resolution.
    pub channels: Vec<usize>,
    pub n_classes: usize,
    /// Odd kernel side of the prediction head.
    pub head_kernel: usize,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub box_weight: f64,
    pub obj_weight: f64,
    pub cls_weight: f64,
    pub init_seed: u64,
}

impl DetectorConfig {
    /// Deployment-size student: 96 px input, 12x12 grid.
    pub fn small(n_classes: usize) -> Self {
        Self {
            input_size: 96,
            grid: 12,
            channels: vec![16, 32, 64],
            n_classes,
            head_kernel: 5,
            batch_norm: true,
            bn_momentum: 0.03,
            bn_eps: 1e-3,
            focal_gamma: 1.5,
            focal_alpha: 0.25,
            box_weight: 2.0,
            obj_weight: 1.0,
            cls_weight: 1.0,
            init_seed: 0,
        }
    }

    /// Higher-capacity teacher: wider, with one extra full-resolution block.
    pub fn teacher(n_classes: usize) -> Self {
        Self {
            channels: vec![24, 48, 96, 96],
            ..Self::small(n_classes)
        }
    }

    pub fn outputs_per_cell(&self) -> usize {
        5 + self.n_classes
    }

    pub fn downsample_blocks(&self) -> usize {
        (self.input_size / self.grid).trailing_zeros() as usize
    }

    pub fn strides(&self) -> Vec<usize> {
        let n_down = self.downsample_blocks();
        (0..self.channels.len()).map(|i| if i < n_down { 2 } else { 1 }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.grid == 0 || self.input_size % self.grid != 0 {
            return err(format!(
                "input_size {} is not divisible by grid {}",
                self.input_size, self.grid
            ));
        }
        let ratio = self.input_size / self.grid;
        if !ratio.is_power_of_two() {
            return err(format!("input_size / grid = {ratio} must be a power of two"));
        }
        if self.downsample_blocks() > self.channels.len() {
            return err(format!(
                "{} blocks cannot reach stride {ratio}",
                self.channels.len()
            ));
        }
        if self.head_kernel % 2 == 0 {
            return err(format!("head_kernel {} must be odd", self.head_kernel));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return err("zero-width block".into());
        }
        if self.n_classes == 0 {
            return err("n_classes must be positive".into());
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) || self.focal_gamma < 0.0 {
            return err(format!(
                "focal gamma {} / alpha {} out of range",
                self.focal_gamma, self.focal_alpha
            ));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return err("bad batch-norm constants".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_follow_grid() {
        assert_eq!(DetectorConfig::small(3).strides(), vec![2, 2, 2]);
        assert_eq!(DetectorConfig::teacher(3).strides(), vec![2, 2, 2, 1]);
    }

    #[test]
    fn rejects_indivisible_grid() {
        let mut cfg = DetectorConfig::small(3);
        cfg.grid = 10;
        assert!(cfg.validate().is_err());
        cfg.grid = 3;
        cfg.input_size = 96;
        assert!(cfg.validate().is_err()); // stride 32 needs 5 blocks
    }
}
