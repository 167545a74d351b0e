//! Beat-synchronous log-CQT rows, centred patches and the on-disk feature store.
//!
//! A store keeps one log-magnitude CQT row per analysis frame (R frames per
//! beat for beat-synchronous analysis). Patches of Q = B·R rows centred on a
//! beat are sliced on demand, so the store is O(L·R·K) rather than O(L·Q·K).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::dsp::{self, BeatGrid, CqtMatrix, CqtParams, DspError};

/// Offset inside the log so silent bins stay finite.
pub const LOG_FLOOR: f32 = 1e-6;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "cqt.f32";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least 2 beats, got {0}")]
    TooFewBeats(usize),
    #[error("beat index {index} out of range for {len} beats")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[inline]
pub fn log_compress(magnitude: f32) -> f32 {
    (magnitude + LOG_FLOOR).ln()
}

/// Patch geometry: `beats_per_patch` (B) beats of `windows_per_beat` (R) frames over `bins` (K).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub beats_per_patch: usize,
    pub windows_per_beat: usize,
    pub bins: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            beats_per_patch: 16,
            windows_per_beat: 8,
            bins: 72,
        }
    }
}

impl PatchConfig {
    /// Q = B·R time indices per patch.
    pub fn frames(&self) -> usize {
        self.beats_per_patch * self.windows_per_beat
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.beats_per_patch == 0 || self.windows_per_beat == 0 || self.bins == 0 {
            return Err(FeatureError::ShapeMismatch(format!("degenerate patch config {self:?}")));
        }
        Ok(())
    }
}

/// How store rows relate to beats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameLayout {
    /// R rows per beat at the subdivision centres; beat `i` owns rows `i·R..(i+1)·R`.
    BeatSynchronous,
    /// Rows every `hop_sec`; "beats" are points of a uniform grid.
    FixedHop { hop_sec: f64 },
}

/// A Q × K log-magnitude excerpt centred on a beat.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Array2<f32>,
    pub center_beat: usize,
}

/// Analysis times `b_i + r(b_{i+1} - b_i)/R`, plus R times after the last
/// beat that continue the final inter-beat interval; L·R values in total.
pub fn subdivision_centers(beats: &BeatGrid, windows_per_beat: usize) -> Result<Vec<f64>, FeatureError> {
    let b = beats.times();
    if b.len() < 2 {
        return Err(FeatureError::TooFewBeats(b.len()));
    }
    let r_count = windows_per_beat as f64;
    let mut out = Vec::with_capacity(b.len() * windows_per_beat);
    for i in 0..b.len() {
        let (start, step) = if i + 1 < b.len() {
            (b[i], b[i + 1] - b[i])
        } else {
            (b[i], b[i] - b[i - 1])
        };
        for r in 0..windows_per_beat {
            out.push(start + r as f64 * step / r_count);
        }
    }
    Ok(out)
}

/// Rows `start..start+len` of `rows`, with out-of-range indices replaced by the nearest edge row.
pub fn edge_replicated_rows(rows: ArrayView2<'_, f32>, start: isize, len: usize) -> Array2<f32> {
    let n = rows.nrows() as isize;
    let mut out = Array2::zeros((len, rows.ncols()));
    for (k, mut dst) in out.rows_mut().into_iter().enumerate() {
        let src = (start + k as isize).clamp(0, n - 1) as usize;
        dst.assign(&rows.row(src));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    track_id: String,
    beat_grid: BeatGrid,
    config: PatchConfig,
    layout: FrameLayout,
    rows: Array2<f32>,
    anchors: Vec<usize>,
}

impl FeatureStore {
    /// Wraps rows that are already log-compressed.
    pub fn from_log_rows(
        track_id: impl Into<String>,
        beat_grid: BeatGrid,
        config: PatchConfig,
        layout: FrameLayout,
        rows: Array2<f32>,
    ) -> Result<Self, FeatureError> {
        config.validate()?;
        if beat_grid.is_empty() {
            return Err(FeatureError::TooFewBeats(0));
        }
        if rows.ncols() != config.bins {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} bins in rows, config says {}",
                rows.ncols(),
                config.bins
            )));
        }
        if rows.nrows() == 0 {
            return Err(FeatureError::ShapeMismatch("no rows".into()));
        }
        let anchors: Vec<usize> = match layout {
            FrameLayout::BeatSynchronous => {
                let expected = beat_grid.len() * config.windows_per_beat;
                if rows.nrows() != expected {
                    return Err(FeatureError::ShapeMismatch(format!(
                        "{} rows, expected L·R = {expected}",
                        rows.nrows()
                    )));
                }
                (0..beat_grid.len()).map(|i| i * config.windows_per_beat).collect()
            }
            FrameLayout::FixedHop { hop_sec } => {
                if !(hop_sec > 0.0) {
                    return Err(FeatureError::CorruptManifest(format!("hop {hop_sec}")));
                }
                beat_grid
                    .times()
                    .iter()
                    .map(|t| ((t / hop_sec).round() as usize).min(rows.nrows() - 1))
                    .collect()
            }
        };
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::ShapeMismatch("non-finite feature value".into()));
        }
        Ok(Self {
            track_id: track_id.into(),
            beat_grid,
            config,
            layout,
            rows,
            anchors,
        })
    }

    /// Log-compresses a CQT computed at [`subdivision_centers`].
    pub fn from_cqt(
        track_id: impl Into<String>,
        beat_grid: BeatGrid,
        cqt: &CqtMatrix,
        config: PatchConfig,
    ) -> Result<Self, FeatureError> {
        let rows = cqt.magnitudes.mapv(log_compress);
        Self::from_log_rows(track_id, beat_grid, config, FrameLayout::BeatSynchronous, rows)
    }

    /// Beat-synchronous analysis of `audio` at the given beats.
    ///
    /// Extrapolated centres past the end of the signal are clamped to its last sample.
    pub fn extract(
        track_id: impl Into<String>,
        audio: &AudioBuffer,
        beats: &BeatGrid,
        cqt: &CqtParams,
        config: PatchConfig,
    ) -> Result<Self, FeatureError> {
        if cqt.n_bins() != config.bins {
            return Err(FeatureError::ShapeMismatch(format!(
                "CQT has {} bins, patch config {}",
                cqt.n_bins(),
                config.bins
            )));
        }
        let duration = audio.duration_sec();
        let beats = beats.clipped(duration);
        let centers: Vec<f64> = subdivision_centers(&beats, config.windows_per_beat)?
            .into_iter()
            .map(|t| t.min(duration))
            .collect();
        let m = dsp::cqt_at_times(audio, cqt, &centers)?;
        Self::from_cqt(track_id, beats, &m, config)
    }

    /// Fixed-hop analysis with patches taken every `step_sec` seconds.
    pub fn extract_fixed_hop(
        track_id: impl Into<String>,
        audio: &AudioBuffer,
        cqt: &CqtParams,
        config: PatchConfig,
        hop_sec: f64,
        step_sec: f64,
    ) -> Result<Self, FeatureError> {
        let m = dsp::cqt_fixed_hop(audio, cqt, hop_sec)?;
        let grid = BeatGrid::uniform(step_sec, audio.duration_sec());
        Self::from_log_rows(
            track_id,
            grid,
            config,
            FrameLayout::FixedHop { hop_sec },
            m.magnitudes.mapv(log_compress),
        )
    }

    pub fn track_id(&self) -> &str {
        &self.track_id
    }

    pub fn beat_grid(&self) -> &BeatGrid {
        &self.beat_grid
    }

    pub fn config(&self) -> &PatchConfig {
        &self.config
    }

    pub fn layout(&self) -> FrameLayout {
        self.layout
    }

    /// Log-magnitude rows (frames × K).
    pub fn rows(&self) -> ArrayView2<'_, f32> {
        self.rows.view()
    }

    /// Number of beats L.
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Rows per beat: R for beat-synchronous stores, the grid step in hops otherwise.
    pub fn rows_per_beat(&self) -> usize {
        match self.layout {
            FrameLayout::BeatSynchronous => self.config.windows_per_beat,
            FrameLayout::FixedHop { hop_sec } => {
                let t = self.beat_grid.times();
                if t.len() < 2 {
                    return 1;
                }
                let step = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
                ((step / hop_sec).round() as usize).max(1)
            }
        }
    }

    /// `n_beats` beats of rows centred on beat `center` (may lie outside the track), edge-replicated.
    pub fn span(&self, center: isize, n_beats: usize) -> Array2<f32> {
        let per_beat = self.rows_per_beat() as isize;
        let anchor = if center >= 0 && (center as usize) < self.anchors.len() {
            self.anchors[center as usize] as isize
        } else {
            let last = self.anchors.len() as isize - 1;
            let nearest = center.clamp(0, last);
            self.anchors[nearest as usize] as isize + (center - nearest) * per_beat
        };
        let len = n_beats * per_beat as usize;
        edge_replicated_rows(self.rows.view(), anchor - (len / 2) as isize, len)
    }

    /// The Q × K patch centred on beat `i`.
    pub fn patch(&self, i: usize) -> Result<Patch, FeatureError> {
        extract_patch(self, i)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), FeatureError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            track_id: self.track_id.clone(),
            n_beats: self.len(),
            bins: self.config.bins,
            frames_per_patch: self.config.frames(),
            beats_per_patch: self.config.beats_per_patch,
            windows_per_beat: self.config.windows_per_beat,
            n_rows: self.rows.nrows(),
            layout: self.layout,
            beat_times: self.beat_grid.times().to_vec(),
            dtype: "float32".into(),
            byte_order: "little".into(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| FeatureError::CorruptManifest(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), json)?;
        let mut bytes = Vec::with_capacity(self.rows.len() * 4);
        for v in self.rows.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(TENSOR_FILE), bytes)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| FeatureError::CorruptManifest(e.to_string()))?;
        if m.dtype != "float32" || m.byte_order != "little" {
            return Err(FeatureError::CorruptManifest(format!(
                "unsupported tensor encoding {} / {}",
                m.dtype, m.byte_order
            )));
        }
        if m.frames_per_patch != m.beats_per_patch * m.windows_per_beat {
            return Err(FeatureError::CorruptManifest(format!(
                "Q = {} but B·R = {}",
                m.frames_per_patch,
                m.beats_per_patch * m.windows_per_beat
            )));
        }
        if m.beat_times.len() != m.n_beats {
            return Err(FeatureError::CorruptManifest(format!(
                "L = {} but {} beat times",
                m.n_beats,
                m.beat_times.len()
            )));
        }
        let bytes = fs::read(dir.join(TENSOR_FILE))?;
        let expected = m.n_rows * m.bins * 4;
        if bytes.len() != expected {
            return Err(FeatureError::ShapeMismatch(format!(
                "tensor has {} bytes, manifest implies {} rows × {} bins = {expected}",
                bytes.len(),
                m.n_rows,
                m.bins
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let rows = Array2::from_shape_vec((m.n_rows, m.bins), values)
            .map_err(|e| FeatureError::ShapeMismatch(e.to_string()))?;
        let grid = BeatGrid::new(m.beat_times).map_err(|e| FeatureError::CorruptManifest(e.to_string()))?;
        let config = PatchConfig {
            beats_per_patch: m.beats_per_patch,
            windows_per_beat: m.windows_per_beat,
            bins: m.bins,
        };
        Self::from_log_rows(m.track_id, grid, config, m.layout, rows)
    }

    /// Saves under `dataset_dir/<track_id>/`.
    pub fn save_to_dataset(&self, dataset_dir: impl AsRef<Path>) -> Result<PathBuf, FeatureError> {
        let dir = dataset_dir.as_ref().join(&self.track_id);
        self.save(&dir)?;
        Ok(dir)
    }
}

/// Patch for beat `i`: rows `[(i - B/2)·R, (i + B/2)·R)` with edge replication.
pub fn extract_patch(store: &FeatureStore, i: usize) -> Result<Patch, FeatureError> {
    if i >= store.len() {
        return Err(FeatureError::IndexOutOfRange {
            index: i,
            len: store.len(),
        });
    }
    let q = store.config.frames();
    let start = store.anchors[i] as isize - (q / 2) as isize;
    Ok(Patch {
        values: edge_replicated_rows(store.rows.view(), start, q),
        center_beat: i,
    })
}

impl FeatureStore {
    /// Per-beat time average of each patch (L × K): an unlearned feature with the same receptive field.
    pub fn mean_pooled(&self) -> Array2<f32> {
        let mut out = Array2::zeros((self.len(), self.config.bins));
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            let patch = extract_patch(self, i).expect("index within store");
            row.assign(&patch.values.mean_axis(ndarray::Axis(0)).expect("patch has rows"));
        }
        out
    }
}

/// Track directories (those holding a manifest) under `dataset_dir`, sorted by name.
pub fn dataset_entries(dataset_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, FeatureError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dataset_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn load_dataset(dataset_dir: impl AsRef<Path>) -> Result<Vec<FeatureStore>, FeatureError> {
    dataset_entries(dataset_dir)?.iter().map(FeatureStore::load).collect()
}

pub fn load_track(dataset_dir: impl AsRef<Path>, track_id: &str) -> Result<FeatureStore, FeatureError> {
    FeatureStore::load(dataset_dir.as_ref().join(track_id))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    track_id: String,
    #[serde(rename = "L")]
    n_beats: usize,
    #[serde(rename = "K")]
    bins: usize,
    #[serde(rename = "Q")]
    frames_per_patch: usize,
    #[serde(rename = "B")]
    beats_per_patch: usize,
    #[serde(rename = "R")]
    windows_per_beat: usize,
    #[serde(rename = "rows")]
    n_rows: usize,
    #[serde(default = "beat_sync")]
    layout: FrameLayout,
    beat_times: Vec<f64>,
    dtype: String,
    byte_order: String,
}

fn beat_sync() -> FrameLayout {
    FrameLayout::BeatSynchronous
}
