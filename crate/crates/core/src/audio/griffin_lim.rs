use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use super::mel::{MelFilterbank, Stft};
use super::{AudioConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};

const PEAK: f32 = 0.95;
const PHASE_SEED: u64 = 0x6c_1f;

/// Mel-to-waveform inversion by iterative phase reconstruction.
pub struct GriffinLim {
    cfg: AudioConfig,
    stft: Stft,
    /// `n_bins × n_mels` pseudo-inverse of the mel filterbank.
    inverse_bank: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct GriffinLimOutput {
    /// Peak-normalized signal.
    pub waveform: Waveform,
    pub peak_before_normalization: f32,
    /// `‖|STFT(x_n)| - S‖` after each iteration, over the full spectrum.
    pub residuals: Vec<f64>,
}

impl GriffinLim {
    pub fn new(cfg: &AudioConfig) -> Result<Self> {
        cfg.validate()?;
        let bank = MelFilterbank::new(cfg);
        let fb = DMatrix::from_row_slice(bank.n_mels(), bank.n_bins(), bank.weights());
        let inverse_bank = fb
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::config(format!("mel filterbank pseudo-inverse: {e}")))?;
        Ok(Self {
            cfg: cfg.clone(),
            stft: Stft::new(cfg),
            inverse_bank,
        })
    }

    /// Linear STFT magnitudes implied by a log-mel spectrogram.
    fn magnitudes(&self, mel: &MelSpectrogram) -> Result<Vec<Vec<f64>>> {
        if mel.n_mels() != self.cfg.n_mels {
            return Err(Error::shape(format!(
                "expected {} mel bins, got {}",
                self.cfg.n_mels,
                mel.n_mels()
            )));
        }
        if mel.hop != self.cfg.hop_length || mel.win != self.cfg.win_length {
            return Err(Error::config("mel framing differs from the inversion config"));
        }
        let n_bins = self.stft.n_bins();
        Ok((0..mel.n_frames())
            .map(|t| {
                let amp = nalgebra::DVector::from_iterator(
                    mel.n_mels(),
                    mel.frames.row(t).iter().map(|&v| (v as f64).exp()),
                );
                let lin = &self.inverse_bank * amp;
                (0..n_bins).map(|k| lin[k].max(0.0)).collect()
            })
            .collect())
    }

    pub fn run(&self, mel: &MelSpectrogram, n_iters: usize) -> Result<GriffinLimOutput> {
        let target = self.magnitudes(mel)?;
        let n_bins = self.stft.n_bins();
        let nyquist = (self.stft.n_fft % 2 == 0).then_some(self.stft.n_fft / 2);
        // Bin weights that turn half-spectrum sums into full-spectrum norms.
        let weight: Vec<f64> = (0..n_bins)
            .map(|k| if k == 0 || Some(k) == nyquist { 1.0 } else { 2.0 })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(PHASE_SEED);
        let mut spectra: Vec<Vec<Complex<f64>>> = target
            .iter()
            .map(|mags| {
                mags.iter()
                    .map(|&m| Complex::from_polar(m, rng.random::<f64>() * std::f64::consts::TAU))
                    .collect()
            })
            .collect();

        let mut residuals = Vec::with_capacity(n_iters);
        let mut signal = self.stft.synthesize(&spectra);
        for _ in 0..n_iters {
            let rebuilt = self.stft.analyze(&signal);
            let mut sq = 0.0;
            for ((spec, got), mags) in spectra.iter_mut().zip(&rebuilt).zip(&target) {
                for k in 0..n_bins {
                    let c = got[k];
                    let norm = c.norm();
                    sq += weight[k] * (norm - mags[k]).powi(2);
                    spec[k] = if norm > 0.0 {
                        c * (mags[k] / norm)
                    } else {
                        Complex::new(mags[k], 0.0)
                    };
                }
            }
            residuals.push(sq.sqrt());
            signal = self.stft.synthesize(&spectra);
        }

        let mut samples: Vec<f32> = signal.iter().map(|&v| v as f32).collect();
        let peak = samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            let g = PEAK / peak;
            samples.iter_mut().for_each(|v| *v *= g);
        }
        Ok(GriffinLimOutput {
            waveform: Waveform::new(samples),
            peak_before_normalization: peak,
            residuals,
        })
    }
}
