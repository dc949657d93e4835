use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization and curriculum settings.
///
/// `Default` is a desk-scale schedule; [`TrainConfig::paper`] is the
/// full-length one (250k steps, stage 1 until 50k, inclusion decay until
/// 150k, batch 16, peak rate 1e-4, 500 warmup steps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub stage1_steps: u64,
    pub decay_end_step: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub n_target_utts: usize,
    /// Divisor applied in stage 2 to the encoders and extractors.
    pub lr_reduction_factor: f64,
    pub seed: u64,
    /// Longest training crop, in frames.
    pub max_frames: usize,
    pub checkpoint_interval: u64,
    /// Apply the L1 loss to both the pre- and post-PostNet outputs.
    pub dual_tap: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            stage1_steps: 500,
            decay_end_step: 1500,
            batch_size: 4,
            peak_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 50,
            n_target_utts: 10,
            lr_reduction_factor: 100.0,
            seed: 0,
            max_frames: 256,
            checkpoint_interval: 500,
            dual_tap: true,
        }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            total_steps: 250_000,
            stage1_steps: 50_000,
            decay_end_step: 150_000,
            batch_size: 16,
            peak_lr: 1e-4,
            warmup_steps: 500,
            checkpoint_interval: 10_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_steps < self.stage1_steps
            && self.stage1_steps < self.decay_end_step
            && self.decay_end_step <= self.total_steps)
        {
            return Err(Error::config(format!(
                "need warmup_steps < stage1_steps < decay_end_step <= total_steps, got {} / {} / {} / {}",
                self.warmup_steps, self.stage1_steps, self.decay_end_step, self.total_steps
            )));
        }
        if !(self.lr_reduction_factor >= 1.0) {
            return Err(Error::config("lr_reduction_factor must be at least 1"));
        }
        if self.batch_size == 0 || self.n_target_utts == 0 || self.max_frames == 0 {
            return Err(Error::config(
                "batch_size, n_target_utts and max_frames must be positive",
            ));
        }
        if !(self.peak_lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("invalid optimizer hyperparameters"));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::config("checkpoint_interval must be positive"));
        }
        Ok(())
    }
}
