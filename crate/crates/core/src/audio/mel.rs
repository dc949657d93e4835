use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of analysis frames for `n` samples, `1 + (n - win) / hop`, or
/// `None` when the signal is shorter than one window.
pub fn frame_count(n: usize, win: usize, hop: usize) -> Option<usize> {
    (n >= win).then(|| 1 + (n - win) / hop)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, equally spaced on the HTK mel scale.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    /// Row-major `n_mels × n_bins`.
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &AudioConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let mut weights = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                weights[m * n_bins + k] = up.min(down).max(0.0);
            }
        }
        Self {
            n_mels: cfg.n_mels,
            n_bins,
            weights,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, magnitude: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(self.weights.chunks_exact(self.n_bins)) {
            *o = w.iter().zip(magnitude).map(|(a, b)| a * b).sum();
        }
    }
}

/// Frame-synchronous short-time Fourier analysis and least-squares
/// overlap-add synthesis.
pub(crate) struct Stft {
    pub n_fft: usize,
    pub win: usize,
    pub hop: usize,
    pub window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: &AudioConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft: cfg.n_fft,
            win: cfg.win_length,
            hop: cfg.hop_length,
            window: hann_window(cfg.win_length),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Half spectra (`n_fft/2 + 1` bins) of every frame.
    pub fn analyze(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let t = frame_count(samples.len(), self.win, self.hop).unwrap_or(0);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        (0..t)
            .map(|i| {
                buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
                let frame = &samples[i * self.hop..i * self.hop + self.win];
                for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                    b.re = x * w;
                }
                self.forward.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Signal whose STFT is closest (least squares) to the given Hermitian
    /// half spectra.
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let t = spectra.len();
        if t == 0 {
            return Vec::new();
        }
        let len = (t - 1) * self.hop + self.win;
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        let half = self.n_bins();
        for (i, spec) in spectra.iter().enumerate() {
            buf[..half].copy_from_slice(spec);
            for k in half..self.n_fft {
                buf[k] = spec[self.n_fft - k].conj();
            }
            // DC and Nyquist of a real signal are real.
            buf[0].im = 0.0;
            if self.n_fft % 2 == 0 {
                buf[self.n_fft / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = i * self.hop;
            for (j, &w) in self.window.iter().enumerate() {
                acc[start + j] += w * buf[j].re * scale;
                norm[start + j] += w * w;
            }
        }
        acc.iter()
            .zip(&norm)
            .map(|(&a, &n)| if n > 1e-12 { a / n } else { 0.0 })
            .collect()
    }
}

/// `T × M` log-mel amplitudes plus the framing that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor<f32>,
    pub hop: usize,
    pub win: usize,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_mels(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Log-mel spectrogram: Hann-windowed STFT magnitude, triangular mel
/// filters, natural log with an amplitude floor.
pub fn log_mel(wave: &Waveform, cfg: &AudioConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    let t = frame_count(wave.len(), cfg.win_length, cfg.hop_length).ok_or_else(|| {
        Error::TooShort(format!(
            "{} samples, need at least one {}-sample window",
            wave.len(),
            cfg.win_length
        ))
    })?;
    let stft = Stft::new(cfg);
    let bank = MelFilterbank::new(cfg);
    let samples: Vec<f64> = wave.samples.iter().map(|&s| s as f64).collect();
    let spectra = stft.analyze(&samples);
    let mut out = Vec::with_capacity(t * cfg.n_mels);
    let mut mag = vec![0.0; stft.n_bins()];
    let mut mel = vec![0.0; cfg.n_mels];
    for spec in &spectra {
        for (m, c) in mag.iter_mut().zip(spec) {
            *m = c.norm();
        }
        bank.apply(&mag, &mut mel);
        out.extend(mel.iter().map(|&v| v.max(cfg.log_floor).ln() as f32));
    }
    Ok(MelSpectrogram {
        frames: Tensor::new([t, cfg.n_mels], out)?,
        hop: cfg.hop_length,
        win: cfg.win_length,
    })
}
