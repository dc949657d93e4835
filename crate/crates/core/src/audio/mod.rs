//! Waveform I/O, log-mel analysis, upstream-feature handling and
//! Griffin-Lim resynthesis.
//!
//! The analysis framing is chosen so that a mel spectrogram and the upstream
//! features of the same utterance have the same number of frames: with a
//! 400-sample window and a 320-sample hop at 16 kHz, `T = 1 + (N - 400) / 320`.

mod config;
mod features;
mod griffin_lim;
mod mel;
mod upstream;
mod wav;

pub use config::AudioConfig;
pub use features::{decode_fvcf, encode_fvcf, read_features, write_features, FeatureSequence};
pub use griffin_lim::{GriffinLim, GriffinLimOutput};
pub use mel::{frame_count, hann_window, log_mel, MelFilterbank, MelSpectrogram};
pub use upstream::PseudoUpstream;
pub use wav::{load_wav, write_wav, Waveform, SAMPLE_RATE};
