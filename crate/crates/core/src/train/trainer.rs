use super::{lr_at, make_batch, step_rng, AdamW, Batch, Checkpoint, CheckpointEntry, Corpus, NormStats, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{FragmentVc, ModelConfig};
use crate::tensor::ParamGroup;

/// Result of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    /// Mean per-sample loss, measured before the update.
    pub loss: f64,
    /// Scheduled rate of the unreduced group.
    pub lr: f64,
}

/// Owns the model, optimizer state and step counter of a training run.
pub struct Trainer {
    model: FragmentVc<f32>,
    optimizer: AdamW<f32>,
    config: TrainConfig,
    stats: NormStats,
    completed: u64,
}

impl Trainer {
    pub fn new(model: FragmentVc<f32>, config: TrainConfig, stats: NormStats) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        if stats.n_mel() != model.config().n_mel {
            return Err(Error::config(format!(
                "statistics cover {} mel bins, model has {}",
                stats.n_mel(),
                model.config().n_mel
            )));
        }
        let optimizer = AdamW::new(
            model.params(),
            config.beta1,
            config.beta2,
            config.eps,
            config.weight_decay,
        );
        Ok(Self {
            model,
            optimizer,
            config,
            stats,
            completed: 0,
        })
    }

    /// Rebuilds a run from a checkpoint; the next step is `checkpoint.step + 1`.
    pub fn from_checkpoint(model_cfg: ModelConfig, config: TrainConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut model = FragmentVc::new(model_cfg, config.seed)?;
        checkpoint.apply_weights(&mut model)?;
        let moments = checkpoint.moments_for(&model)?;
        let mut trainer = Self::new(model, config, checkpoint.stats.clone())?;
        trainer.optimizer.set_moments(moments)?;
        trainer.completed = checkpoint.step;
        Ok(trainer)
    }

    pub fn model(&self) -> &FragmentVc<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Number of optimizer steps taken so far.
    pub fn completed_steps(&self) -> u64 {
        self.completed
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let params = self
            .model
            .params()
            .iter()
            .zip(self.optimizer.moments())
            .map(|(p, mom)| CheckpointEntry {
                name: p.name.clone(),
                value: p.value.clone(),
                m: mom.m.clone(),
                v: mom.v.clone(),
            })
            .collect();
        Checkpoint {
            step: self.completed,
            params,
            stats: self.stats.clone(),
        }
    }

    /// Forward and backward over every sample (loss scaled by `1/B` so the
    /// accumulated gradient is that of the batch mean), then one AdamW update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepLog> {
        let step = self.completed + 1;
        if batch.step != step {
            return Err(Error::config(format!(
                "batch was drawn for step {}, trainer is at step {step}",
                batch.step
            )));
        }
        if batch.samples.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let inv_b = 1.0 / batch.samples.len() as f64;
        self.model.params_mut().zero_grads();
        let mut total = 0.0f64;
        for s in &batch.samples {
            let mut g = self.model.graph();
            let targets: Vec<_> = s.target_mels.iter().collect();
            let out = g.forward(&s.src, &targets)?;
            let loss = g.reconstruction_loss(&out, &s.gt, self.config.dual_tap)?;
            total += g.tape.value(loss).data()[0] as f64;
            let scaled = g.tape.scale(loss, inv_b);
            g.backward(scaled)?;
            let grads = g.into_grads();
            self.model.accumulate_grads(grads)?;
        }
        let cfg = &self.config;
        self.optimizer
            .step(self.model.params_mut(), step, |group| lr_at(cfg, step, group))?;
        self.model.params_mut().zero_grads();
        self.completed = step;
        Ok(StepLog {
            step,
            loss: total * inv_b,
            lr: lr_at(cfg, step, ParamGroup::Other),
        })
    }

    /// Draws the batch for the next step from the seeded stream and trains on it.
    pub fn next_step(&mut self, corpus: &Corpus) -> Result<StepLog> {
        let step = self.completed + 1;
        if step > self.config.total_steps {
            return Err(Error::config(format!(
                "run already finished its {} steps",
                self.config.total_steps
            )));
        }
        let batch = make_batch(corpus, &self.config, step, &mut step_rng(self.config.seed, step))?;
        self.train_step(&batch)
    }

    /// Trains until `until` steps are complete, calling `on_step` after each.
    pub fn run(
        &mut self,
        corpus: &Corpus,
        until: u64,
        mut on_step: impl FnMut(&Self, &StepLog) -> Result<()>,
    ) -> Result<()> {
        corpus.warn_small_speakers(self.config.n_target_utts);
        while self.completed < until.min(self.config.total_steps) {
            let log = self.next_step(corpus)?;
            on_step(self, &log)?;
        }
        Ok(())
    }
}
