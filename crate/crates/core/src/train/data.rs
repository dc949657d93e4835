//! Corpus manifests and the two-stage batch sampler.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{inclusion_probability, NormStats, TrainConfig};
use crate::audio::{self, AudioConfig, MelSpectrogram, PseudoUpstream, Waveform};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

/// File name of corpus statistics written next to a manifest.
pub const NORM_STATS_FILE: &str = "norm_stats.json";

/// One utterance on disk. Either `wav` or `mel` must be present; features
/// are derived from the mel when absent. Relative paths are resolved
/// against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mel: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub speakers: BTreeMap<String, Vec<UtteranceRecord>>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let m: Self = serde_json::from_slice(&bytes).map_err(|e| Error::from(e).in_file(path))?;
        m.validate().map_err(|e| e.in_file(path))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fsutil::atomic_write(path, text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers.is_empty() {
            return Err(Error::config("manifest lists no speakers"));
        }
        for (id, utts) in &self.speakers {
            if utts.is_empty() {
                return Err(Error::config(format!("speaker {id:?} has no utterances")));
            }
            if utts.iter().any(|u| u.wav.is_none() && u.mel.is_none()) {
                return Err(Error::config(format!(
                    "speaker {id:?} has an utterance with neither wav nor mel"
                )));
            }
        }
        Ok(())
    }

    pub fn n_utterances(&self) -> usize {
        self.speakers.values().map(Vec::len).sum()
    }
}

/// An utterance in memory: upstream features and the normalized log-mel,
/// with equal frame counts.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub features: Tensor<f32>,
    pub mel: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct Speaker {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub speakers: Vec<Speaker>,
    pub stats: NormStats,
}

impl Corpus {
    pub fn new(speakers: Vec<Speaker>, stats: NormStats) -> Result<Self> {
        if speakers.is_empty() || speakers.iter().any(|s| s.utterances.is_empty()) {
            return Err(Error::config("every speaker needs at least one utterance"));
        }
        for s in &speakers {
            for u in &s.utterances {
                if u.features.rows()? != u.mel.rows()? {
                    return Err(Error::shape(format!(
                        "speaker {:?}: {} feature frames vs {} mel frames",
                        s.id,
                        u.features.rows()?,
                        u.mel.rows()?
                    )));
                }
            }
        }
        Ok(Self { speakers, stats })
    }

    /// Loads every utterance of a manifest. Statistics come from
    /// `norm_stats.json` beside the manifest when present, otherwise they
    /// are computed from the loaded mels.
    pub fn load(manifest_path: &Path, audio_cfg: &AudioConfig, upstream_dim: usize) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let mut raw = Vec::new();
        for (id, records) in &manifest.speakers {
            let mut utts = Vec::with_capacity(records.len());
            for r in records {
                let mel = match (&r.mel, &r.wav) {
                    (Some(p), _) => {
                        let p = resolve(p);
                        audio::read_features(&p)?.frames
                    }
                    (None, Some(p)) => {
                        let p = resolve(p);
                        let wave = audio::load_wav(&p)?;
                        audio::log_mel(&wave, audio_cfg).map_err(|e| e.in_file(&p))?.frames
                    }
                    (None, None) => unreachable!("validated manifest"),
                };
                let features = match &r.features {
                    Some(p) => Some((resolve(p), audio::read_features(&resolve(p))?.frames)),
                    None => None,
                };
                utts.push((mel, features));
            }
            raw.push((id.clone(), utts));
        }

        let stats_path = base.join(NORM_STATS_FILE);
        let stats = if stats_path.exists() {
            Some(NormStats::load(&stats_path)?)
        } else {
            None
        };
        Self::assemble(raw, stats, audio_cfg, upstream_dim).map_err(|e| match e {
            e @ Error::Config(_) if stats_path.exists() => e.in_file(stats_path),
            e => e,
        })
    }

    /// Builds a corpus from in-memory waveforms, computing statistics and
    /// pseudo-upstream features.
    pub fn from_waveforms(
        speakers: Vec<(String, Vec<Waveform>)>,
        audio_cfg: &AudioConfig,
        upstream_dim: usize,
    ) -> Result<Self> {
        let raw = speakers
            .into_iter()
            .map(|(id, waves)| {
                let utts = waves
                    .iter()
                    .map(|w| Ok((audio::log_mel(w, audio_cfg)?.frames, None)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((id, utts))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(raw, None, audio_cfg, upstream_dim)
    }

    #[allow(clippy::type_complexity)]
    fn assemble(
        raw: Vec<(String, Vec<(Tensor<f32>, Option<(PathBuf, Tensor<f32>)>)>)>,
        stats: Option<NormStats>,
        audio_cfg: &AudioConfig,
        upstream_dim: usize,
    ) -> Result<Self> {
        let stats = match stats {
            Some(s) => s,
            None => {
                let all: Vec<&Tensor<f32>> =
                    raw.iter().flat_map(|(_, u)| u.iter().map(|(m, _)| m)).collect();
                NormStats::compute(&all)?
            }
        };
        if stats.n_mel() != audio_cfg.n_mels {
            return Err(Error::config(format!(
                "statistics cover {} mel bins, audio config has {}",
                stats.n_mel(),
                audio_cfg.n_mels
            )));
        }

        let upstream = PseudoUpstream::new(
            audio_cfg.n_mels,
            audio_cfg.upstream_context,
            upstream_dim,
            audio_cfg.upstream_seed,
        );
        let mut speakers = Vec::with_capacity(raw.len());
        for (id, utts) in raw {
            let mut out = Vec::with_capacity(utts.len());
            for (mel, features) in utts {
                let mel = stats.normalize(&mel)?;
                let features = match features {
                    Some((path, f)) => {
                        if f.cols()? != upstream_dim {
                            return Err(Error::shape(format!(
                                "features have {} dims, model expects {upstream_dim}",
                                f.cols()?
                            ))
                            .in_file(path));
                        }
                        f
                    }
                    None => upstream_features(&upstream, &mel, audio_cfg)?,
                };
                out.push(Utterance { features, mel });
            }
            speakers.push(Speaker { id, utterances: out });
        }
        Self::new(speakers, stats)
    }

    pub fn n_utterances(&self) -> usize {
        self.speakers.iter().map(|s| s.utterances.len()).sum()
    }

    /// Warns about speakers too small to draw `n_targets` distinct
    /// non-source targets, which forces sampling with replacement.
    pub fn warn_small_speakers(&self, n_targets: usize) {
        for s in &self.speakers {
            if s.utterances.len() < n_targets + 1 {
                warn!(
                    "speaker {:?} has {} utterances; stage-2 targets will be drawn with replacement",
                    s.id,
                    s.utterances.len()
                );
            }
        }
    }
}

/// Pseudo-upstream features of an already normalized mel.
pub fn upstream_features(upstream: &PseudoUpstream, normalized_mel: &Tensor<f32>, cfg: &AudioConfig) -> Result<Tensor<f32>> {
    let mel = MelSpectrogram {
        frames: normalized_mel.clone(),
        hop: cfg.hop_length,
        win: cfg.win_length,
    };
    Ok(upstream.apply(&mel)?.frames)
}

/// Sampling stream for `step`: every step owns an independent ChaCha
/// stream of the run seed, so a resumed run draws the same batches.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// One training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub speaker: usize,
    /// Index of the source utterance within its speaker.
    pub source: usize,
    /// Indices of the target utterances, in concatenation order.
    pub targets: Vec<usize>,
    /// First frame of the crop taken from the source utterance.
    pub crop_start: usize,
    pub src: Tensor<f32>,
    pub target_mels: Vec<Tensor<f32>>,
    pub gt: Tensor<f32>,
}

impl Sample {
    pub fn source_in_targets(&self) -> bool {
        self.targets.contains(&self.source)
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub step: u64,
    pub samples: Vec<Sample>,
}

/// Draws `batch_size` independent samples for `step`.
///
/// Stage 1 (`step <= stage1_steps`) reconstructs an utterance from itself:
/// the target list is exactly `[gt]`. Stage 2 draws `n_target_utts` other
/// utterances of the same speaker; with probability
/// `inclusion_probability(step)` the source replaces one random slot.
/// Source features and ground truth are cropped to the same `max_frames`
/// window; targets are used whole.
pub fn make_batch(corpus: &Corpus, cfg: &TrainConfig, step: u64, rng: &mut impl Rng) -> Result<Batch> {
    let mut samples = Vec::with_capacity(cfg.batch_size);
    let p_include = inclusion_probability(cfg, step);
    for _ in 0..cfg.batch_size {
        let speaker = rng.random_range(0..corpus.speakers.len());
        let utts = &corpus.speakers[speaker].utterances;
        let source = rng.random_range(0..utts.len());
        let u = &utts[source];
        let t = u.mel.rows()?;
        let len = t.min(cfg.max_frames);
        let crop_start = rng.random_range(0..=t - len);
        let src = u.features.slice_rows(crop_start, crop_start + len)?;
        let gt = u.mel.slice_rows(crop_start, crop_start + len)?;

        if step <= cfg.stage1_steps {
            samples.push(Sample {
                speaker,
                source,
                targets: vec![source],
                crop_start,
                src,
                target_mels: vec![gt.clone()],
                gt,
            });
            continue;
        }

        let others: Vec<usize> = (0..utts.len()).filter(|&i| i != source).collect();
        let n = cfg.n_target_utts;
        let mut targets: Vec<usize> = if others.len() >= n {
            index::sample(rng, others.len(), n).into_iter().map(|i| others[i]).collect()
        } else if !others.is_empty() {
            (0..n).map(|_| others[rng.random_range(0..others.len())]).collect()
        } else {
            vec![source; n]
        };
        if rng.random_bool(p_include) {
            let slot = rng.random_range(0..n);
            targets[slot] = source;
        }
        let target_mels = targets.iter().map(|&i| utts[i].mel.clone()).collect();
        samples.push(Sample {
            speaker,
            source,
            targets,
            crop_start,
            src,
            target_mels,
            gt,
        });
    }
    Ok(Batch { step, samples })
}
