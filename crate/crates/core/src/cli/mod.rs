//! Command-line driver: `extract`, `train`, `convert`, `inspect`, `invert`.
//!
//! Exit codes: 0 on success, 1 when a command fails while running, 2 for
//! invalid invocations (bad flags, missing input files).

mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

pub use config::{PathsConfig, RunConfig, CONFIG_FILE};

use crate::analysis::{self, ExportFormat};
use crate::audio::{self, FeatureSequence, GriffinLim, MelSpectrogram, PseudoUpstream};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::{AttentionRecord, FragmentVc};
use crate::tensor::Tensor;
use crate::train::{
    upstream_features, Checkpoint, Corpus, Manifest, NormStats, Trainer, UtteranceRecord,
    NORM_STATS_FILE,
};

/// Log file written by `train`.
pub const LOSS_LOG_FILE: &str = "loss.tsv";

#[derive(Debug, Parser)]
#[command(name = "fragmentvc", version, about = "Any-to-any voice conversion with voice fragments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute log-mel and upstream feature files, statistics and a manifest.
    Extract {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        wav_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run two-stage training, writing checkpoints and a loss log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many steps are complete.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Convert a source utterance using one or more target utterances.
    Convert {
        #[arg(long)]
        ckpt: PathBuf,
        /// WAV, upstream-feature FVCF or mel FVCF.
        #[arg(long)]
        source: PathBuf,
        /// WAV or mel FVCF; repeat for several utterances.
        #[arg(long, required = true, num_args = 1..)]
        target: Vec<PathBuf>,
        #[arg(long)]
        out_mel: PathBuf,
        #[arg(long)]
        out_wav: Option<PathBuf>,
        /// Write per-extractor attention maps (CSV and PGM) here.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
        /// Defaults to the config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print an alignment metric of an attention-map CSV.
    Inspect {
        #[arg(long)]
        attention: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
    },
    /// Resynthesize a waveform from a log-mel FVCF with Griffin-Lim.
    Invert {
        #[arg(long)]
        mel: PathBuf,
        #[arg(long)]
        out_wav: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Metric {
    Diagonality,
    ArgmaxRuns,
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(e: &Error) -> u8 {
    if e.is_usage() {
        2
    } else {
        1
    }
}

/// Parses `args` (program name first) and runs the command. Help and
/// version text go to `out`; so does the output of `inspect`.
pub fn run<I, T>(args: I, out: &mut impl Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{}", e.render())?;
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(Error::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    match cli.command {
        Command::Extract {
            config,
            wav_dir,
            out_dir,
        } => {
            let cfg = load_config(config.as_deref())?;
            let wav_dir = wav_dir
                .or(cfg.paths.wav_dir.clone())
                .ok_or_else(|| Error::Usage("--wav-dir is required".into()))?;
            let out_dir = out_dir
                .or(cfg.paths.out_dir.clone())
                .ok_or_else(|| Error::Usage("--out-dir is required".into()))?;
            cmd_extract(&cfg, &wav_dir, &out_dir)
        }
        Command::Train {
            config,
            manifest,
            out,
            resume,
            until,
        } => {
            let manifest = manifest
                .or_else(|| config_paths(config.as_deref()).and_then(|p| p.manifest))
                .ok_or_else(|| Error::Usage("--manifest is required".into()))?;
            require_file(&manifest, "manifest")?;
            let cfg = match config {
                Some(p) => load_config(Some(&p))?,
                None => RunConfig::beside(&manifest)?,
            };
            let out = out
                .or(cfg.paths.train_out.clone())
                .ok_or_else(|| Error::Usage("--out is required".into()))?;
            if let Some(r) = &resume {
                require_file(r, "checkpoint")?;
            }
            cmd_train(&cfg, &manifest, &out, resume.as_deref(), until)
        }
        Command::Convert {
            ckpt,
            source,
            target,
            out_mel,
            out_wav,
            dump_attention,
            config,
        } => {
            require_file(&ckpt, "checkpoint")?;
            require_file(&source, "source")?;
            for t in &target {
                require_file(t, "target")?;
            }
            let cfg = match config {
                Some(p) => load_config(Some(&p))?,
                None => RunConfig::beside(&ckpt)?,
            };
            let request = ConvertRequest {
                source: &source,
                targets: &target,
                out_mel: &out_mel,
                out_wav: out_wav.as_deref(),
                dump_attention: dump_attention.as_deref(),
            };
            cmd_convert(&cfg, &ckpt, &request)
        }
        Command::Inspect { attention, metric } => {
            require_file(&attention, "attention map")?;
            cmd_inspect(&attention, metric, out)
        }
        Command::Invert {
            mel,
            out_wav,
            config,
            iters,
        } => {
            require_file(&mel, "mel")?;
            let cfg = load_config(config.as_deref())?;
            cmd_invert(&cfg, &mel, &out_wav, iters)
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} file {} does not exist", path.display())))
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            require_file(p, "config")?;
            RunConfig::load(p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn config_paths(path: Option<&Path>) -> Option<PathsConfig> {
    path.and_then(|p| RunConfig::load(p).ok()).map(|c| c.paths)
}

/// WAV files directly in `dir` or one directory below it, sorted. The
/// speaker is the subdirectory name, or for top-level files the part of the
/// file stem before the first `_`.
fn collect_wavs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let is_wav = |p: &Path| {
        p.is_file()
            && p
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
    };
    let mut found = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::from(e).in_file(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            let speaker = path.file_name().unwrap().to_string_lossy().into_owned();
            let mut inner: Vec<PathBuf> = std::fs::read_dir(&path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            inner.sort();
            found.extend(inner.into_iter().filter(|p| is_wav(p)).map(|p| (speaker.clone(), p)));
        } else if is_wav(&path) {
            let stem = path.file_stem().unwrap().to_string_lossy();
            let speaker = stem.split('_').next().unwrap_or(&stem).to_string();
            found.push((speaker, path));
        }
    }
    Ok(found)
}

fn with_suffix(rel: &Path, suffix: &str) -> PathBuf {
    let stem = rel.file_stem().unwrap().to_string_lossy();
    rel.with_file_name(format!("{stem}{suffix}"))
}

/// Every WAV is decoded and analysed before anything is written, so a bad
/// file leaves the output directory untouched.
pub fn cmd_extract(cfg: &RunConfig, wav_dir: &Path, out_dir: &Path) -> Result<()> {
    if !wav_dir.is_dir() {
        return Err(Error::Usage(format!("wav directory {} does not exist", wav_dir.display())));
    }
    let wavs = collect_wavs(wav_dir)?;
    if wavs.is_empty() {
        return Err(Error::config(format!("no .wav files in {}", wav_dir.display())));
    }
    let mut mels = Vec::with_capacity(wavs.len());
    for (_, path) in &wavs {
        let wave = audio::load_wav(path)?;
        let mel = audio::log_mel(&wave, &cfg.audio).map_err(|e| e.in_file(path))?;
        mels.push(mel.frames);
    }
    let stats = NormStats::compute(&mels.iter().collect::<Vec<_>>())?;
    let upstream = PseudoUpstream::new(
        cfg.audio.n_mels,
        cfg.audio.upstream_context,
        cfg.model.upstream_dim,
        cfg.audio.upstream_seed,
    );

    let mut manifest = Manifest::default();
    for ((speaker, path), mel) in wavs.iter().zip(&mels) {
        let rel = path.strip_prefix(wav_dir).unwrap_or(path);
        let mel_rel = with_suffix(rel, ".mel.fvcf");
        let feat_rel = with_suffix(rel, ".feat.fvcf");
        if let Some(parent) = out_dir.join(&mel_rel).parent() {
            std::fs::create_dir_all(parent)?;
        }
        let features = upstream_features(&upstream, &stats.normalize(mel)?, &cfg.audio)?;
        audio::write_features(&out_dir.join(&mel_rel), &FeatureSequence::new(mel.clone())?)?;
        audio::write_features(&out_dir.join(&feat_rel), &FeatureSequence::new(features)?)?;
        let wav_abs = std::path::absolute(path)?;
        manifest
            .speakers
            .entry(speaker.clone())
            .or_default()
            .push(UtteranceRecord {
                wav: Some(wav_abs),
                features: Some(feat_rel),
                mel: Some(mel_rel),
            });
    }
    stats.save(&out_dir.join(NORM_STATS_FILE))?;
    manifest.save(&out_dir.join("manifest.json"))?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    info!(
        "extracted {} utterances of {} speakers into {}",
        manifest.n_utterances(),
        manifest.speakers.len(),
        out_dir.display()
    );
    Ok(())
}

fn checkpoint_name(step: u64) -> String {
    format!("step_{step:07}.fvck")
}

fn format_log_line(step: u64, loss: f64, lr: f64) -> String {
    format!("{step}\t{loss:.9e}\t{lr:.9e}\n")
}

/// Loss-log lines of a previous run up to and including `step`.
fn log_prefix(path: &Path, step: u64) -> Result<String> {
    if !path.is_file() {
        return Ok(String::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut keep = String::new();
    for line in text.lines() {
        let s: u64 = line
            .split('\t')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("loss log", format!("bad line {line:?}")).in_file(path))?;
        if s <= step {
            keep.push_str(line);
            keep.push('\n');
        }
    }
    Ok(keep)
}

/// Trains and keeps the loss log in step with the newest checkpoint: both
/// are rewritten atomically every `checkpoint_interval` steps and at the end.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    resume: Option<&Path>,
    until: Option<u64>,
) -> Result<()> {
    cfg.validate()?;
    let corpus = Corpus::load(manifest, &cfg.audio, cfg.model.upstream_dim)?;
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let log_path = out.join(LOSS_LOG_FILE);

    let (mut trainer, mut log) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let log = log_prefix(&log_path, ck.step)?;
            let trainer = Trainer::from_checkpoint(cfg.model.clone(), cfg.train.clone(), &ck)
                .map_err(|e| e.in_file(path))?;
            info!("resuming after step {}", ck.step);
            (trainer, log)
        }
        None => {
            let model = FragmentVc::new(cfg.model.clone(), cfg.train.seed)?;
            (Trainer::new(model, cfg.train.clone(), corpus.stats.clone())?, String::new())
        }
    };
    let until = until.unwrap_or(cfg.train.total_steps).min(cfg.train.total_steps);
    let interval = cfg.train.checkpoint_interval;
    let save = |trainer: &Trainer, log: &str| -> Result<()> {
        let step = trainer.completed_steps();
        trainer.checkpoint().save(&out.join(checkpoint_name(step)))?;
        fsutil::atomic_write(&log_path, log.as_bytes())
    };
    trainer.run(&corpus, until, |trainer, step| {
        log.push_str(&format_log_line(step.step, step.loss, step.lr));
        if step.step % 100 == 0 {
            info!("step {} loss {:.4} lr {:.3e}", step.step, step.loss, step.lr);
        }
        if step.step % interval == 0 {
            save(trainer, &log)?;
        }
        Ok(())
    })?;
    if trainer.completed_steps() % interval != 0 {
        save(&trainer, &log)?;
    }
    Ok(())
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn load_mel(path: &Path, cfg: &RunConfig) -> Result<Tensor<f32>> {
    if is_wav(path) {
        let wave = audio::load_wav(path)?;
        return Ok(audio::log_mel(&wave, &cfg.audio).map_err(|e| e.in_file(path))?.frames);
    }
    let frames = audio::read_features(path)?.frames;
    if frames.cols()? != cfg.model.n_mel {
        return Err(Error::shape(format!(
            "expected a {}-bin mel, file has {} columns",
            cfg.model.n_mel,
            frames.cols()?
        ))
        .in_file(path));
    }
    Ok(frames)
}

/// A loaded checkpoint ready to convert: weights, normalization statistics
/// and the pseudo-upstream matching the run configuration.
pub struct Converter {
    config: RunConfig,
    model: FragmentVc<f32>,
    stats: NormStats,
    upstream: PseudoUpstream,
}

/// Output of [`Converter::convert`].
#[derive(Clone, Debug)]
pub struct Conversion {
    /// Converted log-mel spectrogram in the units of [`audio::log_mel`].
    pub mel: Tensor<f32>,
    pub attention: AttentionRecord,
}

impl Converter {
    pub fn new(config: RunConfig, checkpoint: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let mut model = FragmentVc::<f32>::new(config.model.clone(), 0)?;
        checkpoint.apply_weights(&mut model)?;
        let upstream = PseudoUpstream::new(
            config.audio.n_mels,
            config.audio.upstream_context,
            config.model.upstream_dim,
            config.audio.upstream_seed,
        );
        Ok(Self {
            config,
            model,
            stats: checkpoint.stats.clone(),
            upstream,
        })
    }

    /// Loads a checkpoint; `config` defaults to the `config.json` beside it.
    pub fn load(checkpoint: &Path, config: Option<&Path>) -> Result<Self> {
        let cfg = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::beside(checkpoint)?,
        };
        let ck = Checkpoint::load(checkpoint)?;
        Self::new(cfg, &ck).map_err(|e| e.in_file(checkpoint))
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &FragmentVc<f32> {
        &self.model
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Pseudo-upstream features of a log-mel spectrogram.
    pub fn features_from_mel(&self, mel: &Tensor<f32>) -> Result<Tensor<f32>> {
        upstream_features(&self.upstream, &self.stats.normalize(mel)?, &self.config.audio)
    }

    /// Converts `source` upstream features using log-mel target utterances.
    pub fn convert(&self, source: &Tensor<f32>, target_mels: &[&Tensor<f32>]) -> Result<Conversion> {
        let targets = target_mels
            .iter()
            .map(|m| self.stats.normalize(m))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<f32>> = targets.iter().collect();
        let out = self.model.infer(source, &refs)?;
        Ok(Conversion {
            mel: self.stats.denormalize(&out.mel_post)?,
            attention: out.attention,
        })
    }
}

/// Inputs and outputs of one conversion.
pub struct ConvertRequest<'a> {
    pub source: &'a Path,
    pub targets: &'a [PathBuf],
    pub out_mel: &'a Path,
    pub out_wav: Option<&'a Path>,
    pub dump_attention: Option<&'a Path>,
}

/// Source features come from an upstream FVCF as-is, or from a WAV or mel
/// FVCF through the pseudo-upstream. Output is written in log-mel units.
pub fn cmd_convert(cfg: &RunConfig, ckpt: &Path, req: &ConvertRequest<'_>) -> Result<()> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let conv = Converter::new(cfg.clone(), &checkpoint).map_err(|e| e.in_file(ckpt))?;
    let (n_mel, dim) = (cfg.model.n_mel, cfg.model.upstream_dim);

    let source = if is_wav(req.source) {
        conv.features_from_mel(&load_mel(req.source, cfg)?)?
    } else {
        let frames = audio::read_features(req.source)?.frames;
        match frames.cols()? {
            d if d == dim => frames,
            d if d == n_mel => conv.features_from_mel(&frames)?,
            d => {
                return Err(Error::shape(format!(
                    "source has {d} columns; expected {dim} (features) or {n_mel} (mel)"
                ))
                .in_file(req.source))
            }
        }
    };
    let targets = req
        .targets
        .iter()
        .map(|p| load_mel(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let target_refs: Vec<&Tensor<f32>> = targets.iter().collect();
    let out = conv.convert(&source, &target_refs)?;

    if let Some(dir) = req.dump_attention {
        std::fs::create_dir_all(dir)?;
        for (i, w) in out.attention.layers.iter().enumerate() {
            let map = analysis::combine_heads_rms(w)?;
            let stem = format!("extractor{}", i + 1);
            analysis::export_map(&map, &dir.join(format!("{stem}.csv")), ExportFormat::Csv)?;
            analysis::export_map(&map, &dir.join(format!("{stem}.pgm")), ExportFormat::Pgm)?;
        }
    }
    if let Some(path) = req.out_wav {
        write_griffin_lim(cfg, &out.mel, path, cfg.audio.griffin_lim_iters)?;
    }
    audio::write_features(req.out_mel, &FeatureSequence::new(out.mel)?)
}

fn write_griffin_lim(cfg: &RunConfig, mel: &Tensor<f32>, path: &Path, iters: usize) -> Result<()> {
    let spec = MelSpectrogram {
        frames: mel.clone(),
        hop: cfg.audio.hop_length,
        win: cfg.audio.win_length,
    };
    let gl = GriffinLim::new(&cfg.audio)?.run(&spec, iters)?;
    audio::write_wav(path, &gl.waveform)
}

fn cmd_inspect(path: &Path, metric: Metric, out: &mut impl Write) -> Result<()> {
    let map = analysis::read_csv_map(path)?;
    match metric {
        Metric::Diagonality => writeln!(out, "{:.6}", analysis::diagonality(&map)?)?,
        Metric::ArgmaxRuns => {
            for run in analysis::fragment_runs(&map)? {
                writeln!(out, "{run}")?;
            }
        }
    }
    Ok(())
}

fn cmd_invert(cfg: &RunConfig, mel: &Path, out_wav: &Path, iters: Option<usize>) -> Result<()> {
    let frames = load_mel(mel, cfg)?;
    write_griffin_lim(cfg, &frames, out_wav, iters.unwrap_or(cfg.audio.griffin_lim_iters))
}
