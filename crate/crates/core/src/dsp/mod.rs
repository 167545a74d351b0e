//! Constant-Q analysis, beat tracking and the 2D Fourier magnitude feature.

mod beats;
mod cqt;
mod fft2;

use std::path::Path;

use thiserror::Error;

pub use beats::{track_beats, BeatTrackerConfig};
pub use cqt::{cqt_at_times, cqt_fixed_hop, Cqt, CqtMatrix, CqtParams};
pub(crate) use fft2::euclidean;
pub use fft2::{twodfft_feature, TwoDimDftFeature, TWODFT_EPSILON};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("frame center {0} s outside [0, {1}] s")]
    CenterOutOfRange(f64, f64),
    #[error("frame centers must be sorted ascending")]
    UnsortedCenters,
    #[error("invalid CQT parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid beat grid: {0}")]
    InvalidBeats(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Beat times in seconds, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatGrid {
    beat_times: Vec<f64>,
}

impl BeatGrid {
    pub fn new(beat_times: Vec<f64>) -> Result<Self, DspError> {
        if beat_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(DspError::InvalidBeats("non-finite or negative time".into()));
        }
        if beat_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DspError::InvalidBeats("times not strictly increasing".into()));
        }
        Ok(Self { beat_times })
    }

    /// Uniform grid `0, period, 2·period, …` up to and including `duration`.
    pub fn uniform(period: f64, duration: f64) -> Self {
        let n = (duration / period + 1e-9).floor() as usize + 1;
        Self {
            beat_times: (0..n).map(|i| i as f64 * period).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.beat_times
    }

    pub fn len(&self) -> usize {
        self.beat_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat_times.is_empty()
    }

    /// Index of the beat nearest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        let pos = self.beat_times.partition_point(|&b| b < t);
        let candidates = [pos.checked_sub(1), Some(pos)];
        candidates
            .into_iter()
            .flatten()
            .filter(|&i| i < self.beat_times.len())
            .min_by(|&a, &b| {
                (self.beat_times[a] - t)
                    .abs()
                    .total_cmp(&(self.beat_times[b] - t).abs())
            })
    }

    /// Reads a beat override file: one time in seconds per line, blank lines and `#` comments ignored.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, DspError> {
        let text = std::fs::read_to_string(path)?;
        let mut times = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let t: f64 = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|_| DspError::InvalidBeats(format!("line {}: {line:?}", n + 1)))?;
            times.push(t);
        }
        Self::new(times)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DspError> {
        let mut out = String::new();
        for t in &self.beat_times {
            out.push_str(&format!("{t:.6}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Drops beats after `duration`.
    pub fn clipped(&self, duration: f64) -> Self {
        Self {
            beat_times: self.beat_times.iter().copied().filter(|&t| t <= duration).collect(),
        }
    }
}
