//! Two-stage training: self-reconstruction first, then reconstruction from
//! other utterances of the same speaker with a decaying chance that the
//! source itself is among the targets. AdamW with warmup and cosine decay;
//! encoders and extractors slow down by a constant factor in stage 2.

mod checkpoint;
mod config;
mod data;
mod norm;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use config::TrainConfig;
pub use data::{
    make_batch, step_rng, upstream_features, Batch, Corpus, Manifest, Sample, Speaker, Utterance,
    UtteranceRecord, NORM_STATS_FILE,
};
pub use norm::NormStats;
pub use optim::{AdamW, Moments};
pub use schedule::{base_lr, inclusion_probability, lr_at};
pub use trainer::{StepLog, Trainer};
