use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// File name under which commands echo the effective configuration.
pub const CONFIG_FILE: &str = "config.json";

/// Optional default paths; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub wav_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub train_out: Option<PathBuf>,
}

/// Everything a command needs, as one JSON document. Missing sections and
/// fields take their defaults; unknown keys are errors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub audio: AudioConfig,
    #[serde(skip_serializing_if = "is_default_paths")]
    pub paths: PathsConfig,
}

fn is_default_paths(p: &PathsConfig) -> bool {
    *p == PathsConfig::default()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.audio.validate()?;
        if self.model.n_mel != self.audio.n_mels {
            return Err(Error::config(format!(
                "model.n_mel ({}) differs from audio.n_mels ({})",
                self.model.n_mel, self.audio.n_mels
            )));
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::parse(&bytes).map_err(|e| e.in_file(path))
    }

    /// The `config.json` in the same directory as `file` if present, else
    /// the defaults.
    pub fn beside(file: &Path) -> Result<Self> {
        let candidate = file.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
        if candidate.is_file() {
            log::info!("using configuration {}", candidate.display());
            Self::load(&candidate)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fsutil::atomic_write(path, text.as_bytes())
    }
}
