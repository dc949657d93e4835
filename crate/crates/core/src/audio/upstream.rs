//! Deterministic stand-in for a pretrained upstream speech encoder.
//!
//! Each mel frame is stacked with its neighbours (edge-padded), projected by
//! a fixed seeded Gaussian matrix and squashed with `tanh`. The result is
//! context-aware and nonlinear but still carries the speaker's spectral
//! colouring, which is the property the decoder has to cope with.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FeatureSequence, MelSpectrogram};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

#[derive(Clone, Debug)]
pub struct PseudoUpstream {
    context: usize,
    n_mels: usize,
    dim: usize,
    /// `(2·context + 1)·n_mels × dim`, row-major.
    projection: Vec<f32>,
}

impl PseudoUpstream {
    pub fn new(n_mels: usize, context: usize, dim: usize, seed: u64) -> Self {
        let fan_in = (2 * context + 1) * n_mels;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..fan_in * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * scale) as f32
            })
            .collect();
        Self {
            context,
            n_mels,
            dim,
            projection,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, mel: &MelSpectrogram) -> Result<FeatureSequence> {
        if mel.n_mels() != self.n_mels {
            return Err(Error::shape(format!(
                "pseudo-upstream built for {} mel bins, got {}",
                self.n_mels,
                mel.n_mels()
            )));
        }
        let t = mel.n_frames();
        let width = (2 * self.context + 1) * self.n_mels;
        let mut stacked = Vec::with_capacity(t * width);
        for i in 0..t as isize {
            for off in -(self.context as isize)..=self.context as isize {
                let j = (i + off).clamp(0, t as isize - 1) as usize;
                stacked.extend_from_slice(mel.frames.row(j));
            }
        }
        let mut out = vec![0.0f32; t * self.dim];
        kernels::matmul_nn(&stacked, &self.projection, t, width, self.dim, &mut out);
        out.iter_mut().for_each(|v| *v = v.tanh());
        FeatureSequence::new(Tensor::new([t, self.dim], out)?)
    }
}
