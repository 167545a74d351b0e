//! Flat `key = value` pipeline configuration.
//!
//! Every key has a default; a document only needs the keys it changes.
//! Unknown or repeated keys are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::audio::ANALYSIS_RATE;
use crate::dsp::CqtParams;
use crate::embedding::{ArchConfig, ConvLayer, SamplerKind, TrainConfig};
use crate::evaluation::DEFAULT_WINDOW_SEC;
use crate::features::PatchConfig;
use crate::sampling::SamplingParams;
use crate::segmentation::SegmentationParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("{key} = '{value}': {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether patches are built at beat subdivisions or from a fixed-hop CQT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synchronization {
    Beat,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub cqt: CqtParams,
    pub patch: PatchConfig,
    pub synchronization: Synchronization,
    /// CQT hop for fixed-hop analysis: 79 samples at 22050 Hz.
    pub fixed_hop_sec: f64,
    /// Spacing of embedded frames for fixed-hop analysis.
    pub fixed_step_sec: f64,
    pub sampling: SamplingParams,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub segment: SegmentationParams,
    pub eval_window_sec: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            sample_rate: ANALYSIS_RATE,
            cqt: CqtParams::default(),
            patch: PatchConfig::default(),
            synchronization: Synchronization::Beat,
            fixed_hop_sec: 79.0 / ANALYSIS_RATE as f64,
            fixed_step_sec: 0.2484,
            sampling: train.sampling,
            arch: ArchConfig::standard(),
            train,
            segment: SegmentationParams::default(),
            eval_window_sec: DEFAULT_WINDOW_SEC,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    /// All keys in document order with their current values.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let first = self.arch.conv.first();
        vec![
            ("audio.sample_rate", self.sample_rate.to_string()),
            ("cqt.f_min", self.cqt.f_min.to_string()),
            ("cqt.bins_per_octave", self.cqt.bins_per_octave.to_string()),
            ("cqt.n_octaves", self.cqt.n_octaves.to_string()),
            ("cqt.q_factor", self.cqt.q_factor.to_string()),
            ("patch.beats_per_patch", self.patch.beats_per_patch.to_string()),
            ("patch.windows_per_beat", self.patch.windows_per_beat.to_string()),
            (
                "features.synchronization",
                match self.synchronization {
                    Synchronization::Beat => "beat".into(),
                    Synchronization::Fixed => "fixed".into(),
                },
            ),
            ("features.fixed_hop_sec", self.fixed_hop_sec.to_string()),
            ("features.fixed_step_sec", self.fixed_step_sec.to_string()),
            ("sampling.delta_p", self.sampling.delta_p.to_string()),
            ("sampling.delta_n_min", self.sampling.delta_n_min.to_string()),
            ("sampling.delta_n_max", self.sampling.delta_n_max.to_string()),
            (
                "arch.conv_channels",
                join(&self.arch.conv.iter().map(|c| c.channels).collect::<Vec<_>>()),
            ),
            (
                "arch.conv_kernel",
                first.map_or("6x4".into(), |c| format!("{}x{}", c.kernel.0, c.kernel.1)),
            ),
            ("arch.conv_pool", first.map_or(true, |c| c.pool).to_string()),
            ("arch.dense", join(&self.arch.dense)),
            ("arch.dim", self.arch.dim.to_string()),
            ("arch.normalize_patches", self.arch.normalize_patches.to_string()),
            ("train.margin", self.train.margin.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batches_per_epoch", self.train.batches_per_epoch.to_string()),
            ("train.tracks_per_batch", self.train.tracks_per_batch.to_string()),
            ("train.triplets_per_track", self.train.triplets_per_track.to_string()),
            ("train.learning_rate", self.train.optimizer.learning_rate.to_string()),
            ("train.beta1", self.train.optimizer.beta1.to_string()),
            ("train.beta2", self.train.optimizer.beta2.to_string()),
            ("train.epsilon", self.train.optimizer.epsilon.to_string()),
            ("train.sampler", self.train.sampler.name().into()),
            ("train.seed", self.train.seed.to_string()),
            ("segment.median_window", self.segment.median_window.to_string()),
            ("segment.kappa", self.segment.kappa.to_string()),
            ("segment.sigma", self.segment.sigma.to_string()),
            ("segment.peak_window", self.segment.peak_window.to_string()),
            ("segment.threshold", self.segment.threshold.to_string()),
            ("eval.window_sec", self.eval_window_sec.to_string()),
        ]
    }

    /// Sets one key. Returns `Ok(false)` for an unknown key.
    fn set(&mut self, key: &str, v: &str) -> Result<bool, ConfigError> {
        let p = |v: &str| -> Result<f64, ConfigError> { parse(key, v) };
        let u = |v: &str| -> Result<usize, ConfigError> { parse(key, v) };
        match key {
            "audio.sample_rate" => self.sample_rate = parse(key, v)?,
            "cqt.f_min" => self.cqt.f_min = p(v)?,
            "cqt.bins_per_octave" => self.cqt.bins_per_octave = u(v)?,
            "cqt.n_octaves" => self.cqt.n_octaves = u(v)?,
            "cqt.q_factor" => self.cqt.q_factor = p(v)?,
            "patch.beats_per_patch" => self.patch.beats_per_patch = u(v)?,
            "patch.windows_per_beat" => self.patch.windows_per_beat = u(v)?,
            "features.synchronization" => {
                self.synchronization = match v {
                    "beat" => Synchronization::Beat,
                    "fixed" => Synchronization::Fixed,
                    _ => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected 'beat' or 'fixed'".into(),
                        })
                    }
                }
            }
            "features.fixed_hop_sec" => self.fixed_hop_sec = p(v)?,
            "features.fixed_step_sec" => self.fixed_step_sec = p(v)?,
            "sampling.delta_p" => self.sampling.delta_p = u(v)?,
            "sampling.delta_n_min" => self.sampling.delta_n_min = u(v)?,
            "sampling.delta_n_max" => self.sampling.delta_n_max = u(v)?,
            "arch.conv_channels" => {
                let template = self.arch.conv.first().copied().unwrap_or(ConvLayer {
                    kernel: (6, 4),
                    channels: 1,
                    pool: true,
                });
                self.arch.conv = list(key, v)?
                    .into_iter()
                    .map(|channels| ConvLayer { channels, ..template })
                    .collect();
            }
            "arch.conv_kernel" => {
                let (a, b) = v.split_once('x').ok_or_else(|| ConfigError::InvalidValue {
                    key: key.into(),
                    value: v.into(),
                    reason: "expected TIMExFREQ, e.g. 6x4".into(),
                })?;
                let kernel = (u(a.trim())?, u(b.trim())?);
                self.arch.conv.iter_mut().for_each(|c| c.kernel = kernel);
            }
            "arch.conv_pool" => {
                let pool: bool = parse(key, v)?;
                self.arch.conv.iter_mut().for_each(|c| c.pool = pool);
            }
            "arch.dense" => self.arch.dense = list(key, v)?,
            "arch.dim" => self.arch.dim = u(v)?,
            "arch.normalize_patches" => self.arch.normalize_patches = parse(key, v)?,
            "train.margin" => self.train.margin = p(v)?,
            "train.epochs" => self.train.epochs = u(v)?,
            "train.batches_per_epoch" => self.train.batches_per_epoch = u(v)?,
            "train.tracks_per_batch" => self.train.tracks_per_batch = u(v)?,
            "train.triplets_per_track" => self.train.triplets_per_track = u(v)?,
            "train.learning_rate" => self.train.optimizer.learning_rate = p(v)?,
            "train.beta1" => self.train.optimizer.beta1 = p(v)?,
            "train.beta2" => self.train.optimizer.beta2 = p(v)?,
            "train.epsilon" => self.train.optimizer.epsilon = p(v)?,
            "train.sampler" => {
                self.train.sampler = v.parse::<SamplerKind>().map_err(|reason| ConfigError::InvalidValue {
                    key: key.into(),
                    value: v.into(),
                    reason,
                })?
            }
            "train.seed" => self.train.seed = parse(key, v)?,
            "segment.median_window" => self.segment.median_window = u(v)?,
            "segment.kappa" => self.segment.kappa = u(v)?,
            "segment.sigma" => self.segment.sigma = p(v)?,
            "segment.peak_window" => self.segment.peak_window = u(v)?,
            "segment.threshold" => self.segment.threshold = p(v)?,
            "eval.window_sec" => self.eval_window_sec = p(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Fills derived fields (K, Q, network input, sampling copy) and checks every section.
    fn finish(mut self) -> Result<Self, ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.patch.bins = self.cqt.n_bins();
        self.arch.input = (self.patch.frames(), self.patch.bins);
        self.train.sampling = self.sampling;
        self.cqt.validate(self.sample_rate).map_err(|e| invalid(&e))?;
        self.patch.validate().map_err(|e| invalid(&e))?;
        self.arch.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.segment.validate().map_err(|e| invalid(&e))?;
        if !(self.fixed_hop_sec > 0.0 && self.fixed_step_sec > 0.0) {
            return Err(ConfigError::Invalid("fixed-hop timings must be positive".into()));
        }
        if !(self.eval_window_sec > 0.0) {
            return Err(ConfigError::Invalid("eval.window_sec must be positive".into()));
        }
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line: n + 1,
                    key: key.into(),
                });
            }
            if !cfg.set(key, value)? {
                return Err(ConfigError::UnknownKey {
                    line: n + 1,
                    key: key.into(),
                });
            }
        }
        cfg.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Every key, one per line, in a form [`PipelineConfig::parse`] reads back identically.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {s}");
                section = s;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
