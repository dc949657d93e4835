//! FVCK checkpoints.
//!
//! Layout, all little-endian: `"FVCK"`, `u32` version, `u64` step, `u32`
//! parameter count; per parameter `u16` name length, UTF-8 name, `u8` rank,
//! `u32` dims, then the values, Adam first moments and Adam second moments
//! as `f32`; finally the normalization mean and std (`2·M` `f32`).

use std::path::Path;

use super::{Moments, NormStats};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::FragmentVc;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FVCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub value: Tensor<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Number of completed optimizer steps.
    pub step: u64,
    pub params: Vec<CheckpointEntry>,
    pub stats: NormStats,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let err = |r: &str| Error::format("FVCK", r.to_string());
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let count = u32::try_from(self.params.len()).map_err(|_| err("too many parameters"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| err("parameter name too long"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            let rank = u8::try_from(p.value.rank()).map_err(|_| err("rank too large"))?;
            out.push(rank);
            for &d in p.value.shape() {
                let d = u32::try_from(d).map_err(|_| err("dimension too large"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            if p.m.len() != p.value.len() || p.v.len() != p.value.len() {
                return Err(err("moment length differs from parameter size"));
            }
            for x in p.value.data().iter().chain(&p.m).chain(&p.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.stats.validate()?;
        for x in self.stats.mean.iter().chain(&self.stats.std) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("FVCK", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("FVCK", format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("FVCK", "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let value = Tensor::new(shape, r.f32s(n)?)
                .map_err(|e| Error::format("FVCK", format!("parameter {name}: {e}")))?;
            let m = r.f32s(n)?;
            let v = r.f32s(n)?;
            params.push(CheckpointEntry { name, value, m, v });
        }
        let rest = bytes.len() - r.pos;
        if rest == 0 || rest % 8 != 0 {
            return Err(Error::format("FVCK", "normalization statistics are missing or truncated"));
        }
        let m = rest / 8;
        let stats = NormStats {
            mean: r.f32s(m)?,
            std: r.f32s(m)?,
        };
        stats.validate()?;
        Ok(Self { step, params, stats })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::decode(&bytes).map_err(|e| e.in_file(path))
    }

    /// Copies stored weights into `model`, matching parameters by name.
    pub fn apply_weights(&self, model: &mut FragmentVc<f32>) -> Result<()> {
        if self.params.len() != model.params().len() {
            return Err(Error::config(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for e in &self.params {
            let id = model
                .params()
                .id_of(&e.name)
                .ok_or_else(|| Error::config(format!("checkpoint parameter {:?} not in model", e.name)))?;
            let p = model.params_mut().get_mut(id);
            if p.value.shape() != e.value.shape() {
                return Err(Error::config(format!(
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    e.name,
                    e.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = e.value.clone();
        }
        if self.stats.n_mel() != model.config().n_mel {
            return Err(Error::config(format!(
                "checkpoint statistics cover {} mel bins, model has {}",
                self.stats.n_mel(),
                model.config().n_mel
            )));
        }
        Ok(())
    }

    /// Adam moments reordered to the model's parameter order.
    pub fn moments_for(&self, model: &FragmentVc<f32>) -> Result<Vec<Moments<f32>>> {
        model
            .params()
            .iter()
            .map(|p| {
                let e = self
                    .params
                    .iter()
                    .find(|e| e.name == p.name)
                    .ok_or_else(|| Error::config(format!("checkpoint lacks parameter {:?}", p.name)))?;
                Ok(Moments {
                    m: e.m.clone(),
                    v: e.v.clone(),
                })
            })
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("FVCK", "unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("FVCK", "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            step: 42,
            params: vec![
                CheckpointEntry {
                    name: "a.weight".into(),
                    value: Tensor::new([2, 3], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap(),
                    m: vec![0.1; 6],
                    v: vec![0.2; 6],
                },
                CheckpointEntry {
                    name: "b".into(),
                    value: Tensor::new([1], vec![7.0]).unwrap(),
                    m: vec![0.0],
                    v: vec![1e-30],
                },
            ],
            stats: NormStats {
                mean: vec![-5.0, 1.0],
                std: vec![2.0, 0.5],
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back, ck);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().encode().unwrap();
        assert_eq!(&bytes[..4], b"FVCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 42);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = sample().encode().unwrap();
        bytes[0] = b'X';
        assert!(Checkpoint::decode(&bytes).is_err());
    }

    #[test]
    fn truncation_rejected() {
        let bytes = sample().encode().unwrap();
        for cut in [3, 17, 30, bytes.len() - 3] {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }
}
