use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

/// Smallest standard deviation used for scaling, so that constant bins
/// (silence at the log floor) map to 0 instead of blowing up.
const MIN_STD: f64 = 1e-5;

/// Per-bin mean and standard deviation of log-mel frames over a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity(n_mel: usize) -> Self {
        Self {
            mean: vec![0.0; n_mel],
            std: vec![1.0; n_mel],
        }
    }

    /// Pooled statistics over every frame of every spectrogram.
    pub fn compute(mels: &[&Tensor<f32>]) -> Result<Self> {
        let first = mels.first().ok_or_else(|| Error::config("no spectrograms to normalize"))?;
        let m = first.cols()?;
        let mut sum = vec![0.0f64; m];
        let mut sq = vec![0.0f64; m];
        let mut n = 0usize;
        for mel in mels {
            if mel.cols()? != m {
                return Err(Error::shape(format!("mel with {} bins among {m}-bin mels", mel.cols()?)));
            }
            for i in 0..mel.rows()? {
                for (j, &v) in mel.row(i).iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, mu)| ((s / n - mu * mu).max(0.0).sqrt().max(MIN_STD)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|v| v as f32).collect(),
            std,
        })
    }

    pub fn n_mel(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::format("normalization stats", "mean and std lengths differ or are empty"));
        }
        if self.std.iter().any(|s| !(*s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::format("normalization stats", "std must be positive and mean finite"));
        }
        Ok(())
    }

    fn check(&self, mel: &Tensor<f32>) -> Result<()> {
        if mel.cols()? != self.n_mel() {
            return Err(Error::shape(format!(
                "mel has {} bins, statistics cover {}",
                mel.cols()?,
                self.n_mel()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, mel: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(mel)?;
        let m = self.n_mel();
        let mut out = mel.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % m]) / self.std[i % m];
        }
        Ok(out)
    }

    pub fn denormalize(&self, mel: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check(mel)?;
        let m = self.n_mel();
        let mut out = mel.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % m] + self.mean[i % m];
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let stats: Self = serde_json::from_slice(&bytes).map_err(|e| Error::from(e).in_file(path))?;
        stats.validate().map_err(|e| e.in_file(path))?;
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fsutil::atomic_write(path, text.as_bytes())
    }
}
