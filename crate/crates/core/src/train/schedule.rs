//! Step-indexed schedules: the probability that the source utterance is
//! among the targets, and the per-group learning rate.

use std::f64::consts::PI;

use super::TrainConfig;
use crate::tensor::ParamGroup;

/// 1 through stage 1, linear down to 0 at `decay_end_step`, 0 afterwards.
pub fn inclusion_probability(cfg: &TrainConfig, step: u64) -> f64 {
    if step <= cfg.stage1_steps {
        1.0
    } else if step >= cfg.decay_end_step {
        0.0
    } else {
        let span = (cfg.decay_end_step - cfg.stage1_steps) as f64;
        1.0 - (step - cfg.stage1_steps) as f64 / span
    }
}

/// Linear warmup to `peak_lr`, then cosine annealing to 0 at `total_steps`.
pub fn base_lr(cfg: &TrainConfig, step: u64) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.peak_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
    cfg.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Learning rate for `group`; after stage 1 the encoders and extractors run
/// at `base_lr / lr_reduction_factor`.
pub fn lr_at(cfg: &TrainConfig, step: u64, group: ParamGroup) -> f64 {
    let base = base_lr(cfg, step);
    if step > cfg.stage1_steps && group.is_reduced_in_stage2() {
        base / cfg.lr_reduction_factor
    } else {
        base
    }
}
