use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis and resynthesis parameters.
///
/// Mel-bin count, frequency range and log base are conventions (80 bins over
/// 0–8000 Hz, natural log); the only hard requirement is that the hop and
/// window reproduce the upstream feature frame rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    /// FFT size; frames are zero-padded from `win_length`.
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Amplitude floor applied before the log.
    pub log_floor: f64,
    /// Context frames on each side for the pseudo-upstream features.
    pub upstream_context: usize,
    pub upstream_seed: u64,
    pub griffin_lim_iters: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_length: 400,
            hop_length: 320,
            n_fft: 1024,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            log_floor: 1e-10,
            upstream_context: 2,
            upstream_seed: 0x5eed,
            griffin_lim_iters: 60,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != super::SAMPLE_RATE {
            return Err(Error::config(format!(
                "sample_rate must be {}, got {}",
                super::SAMPLE_RATE,
                self.sample_rate
            )));
        }
        if self.win_length == 0 || self.hop_length == 0 {
            return Err(Error::config("win_length and hop_length must be positive"));
        }
        if self.n_fft < self.win_length {
            return Err(Error::config("n_fft must be at least win_length"));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be positive"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(Error::config(format!(
                "need 0 <= f_min < f_max <= {nyquist}"
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }
}
