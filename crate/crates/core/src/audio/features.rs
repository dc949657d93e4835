//! FVCF: `"FVC1"`, little-endian `u32` T, `u32` D, then `T·D` little-endian
//! `f32` values in row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FVC1";

/// `T × D` frame-level upstream representations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor<f32>,
}

impl FeatureSequence {
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        frames.rows()?;
        Ok(Self { frames })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }
}

pub fn encode_fvcf(frames: &Tensor<f32>) -> Result<Vec<u8>> {
    let (t, d) = (frames.rows()?, frames.cols()?);
    let t32 = u32::try_from(t).map_err(|_| Error::format("FVCF", "too many frames"))?;
    let d32 = u32::try_from(d).map_err(|_| Error::format("FVCF", "dimension too large"))?;
    let mut out = Vec::with_capacity(12 + 4 * t * d);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&t32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for v in frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fvcf(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |r: &str| Error::format("FVCF", r);
    if bytes.len() < 12 {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if t == 0 || d == 0 {
        return Err(bad("zero frames or zero dimension"));
    }
    let n = t
        .checked_mul(d)
        .ok_or_else(|| bad("dimensions overflow"))?;
    let body = &bytes[12..];
    if body.len() != 4 * n {
        return Err(bad(&format!(
            "expected {} payload bytes for {t}×{d}, found {}",
            4 * n,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new([t, d], data)
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = fsutil::read(path)?;
    decode_fvcf(&bytes)
        .map(|frames| FeatureSequence { frames })
        .map_err(|e| e.in_file(path))
}

pub fn write_features(path: &Path, features: &FeatureSequence) -> Result<()> {
    fsutil::atomic_write(path, &encode_fvcf(&features.frames)?)
}
