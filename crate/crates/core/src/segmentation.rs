//! Boundary detection on the embedding self-similarity matrix.
//!
//! The SSM holds squared distances, so segment boundaries show up as strongly
//! negative responses of the checkerboard correlation. The novelty curve
//! exposed here is that response negated and rectified.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::BeatGrid;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("invalid segmentation parameters: {0}")]
    InvalidParams(String),
    #[error("need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("boundary index {index} outside grid of {len} beats")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Squared Euclidean distances between frames (L × L).
#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarityMatrix<T> {
    pub values: Array2<T>,
    pub filtered: bool,
}

impl<T: Scalar> SelfSimilarityMatrix<T> {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Raw little-endian f32 matrix at `path` plus a JSON sidecar at `path.json`.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<(), SegmentationError> {
        let path = path.as_ref();
        let mut w = BufWriter::new(fs::File::create(path)?);
        for &v in self.values.iter() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        w.flush()?;
        let sidecar = serde_json::json!({
            "L": self.len(),
            "filtered": self.filtered,
            "dtype": "float32",
            "byte_order": "little",
        });
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        fs::write(name, serde_json::to_vec_pretty(&sidecar).expect("json value serializes"))?;
        Ok(())
    }
}

/// `S[i,j] = ‖e_i − e_j‖²` over the rows of `emb`; exactly symmetric with a zero diagonal.
pub fn compute_ssm<T: Scalar>(emb: ArrayView2<'_, T>) -> SelfSimilarityMatrix<T> {
    let l = emb.nrows();
    let upper: Vec<Vec<T>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let a = emb.row(i);
            (i + 1..l)
                .map(|j| a.iter().zip(emb.row(j)).map(|(&x, &y)| (x - y) * (x - y)).sum())
                .collect()
        })
        .collect();
    let mut values = Array2::zeros((l, l));
    for (i, row) in upper.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            values[[i, i + 1 + k]] = v;
            values[[i + 1 + k, i]] = v;
        }
    }
    SelfSimilarityMatrix {
        values,
        filtered: false,
    }
}

fn median_of<T: Scalar>(buf: &mut [T]) -> T {
    buf.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        (buf[n / 2 - 1] + buf[n / 2]) / T::lit(2.0)
    }
}

/// `w × w` median over rows `[i − ⌈w/2⌉ + 1, i + ⌊w/2⌋]` (columns alike), shrinking at the edges.
pub fn median_filter<T: Scalar>(ssm: &SelfSimilarityMatrix<T>, w: usize) -> Result<SelfSimilarityMatrix<T>, SegmentationError> {
    if w == 0 {
        return Err(SegmentationError::InvalidParams("median window must be >= 1".into()));
    }
    let l = ssm.len();
    let before = w.div_ceil(2) - 1;
    let after = w / 2;
    let range = |i: usize| i.saturating_sub(before)..(i + after + 1).min(l);
    let s = &ssm.values;
    let rows: Vec<Vec<T>> = (0..l)
        .into_par_iter()
        .map(|i| {
            let mut buf = Vec::with_capacity(w * w);
            (0..l)
                .map(|j| {
                    buf.clear();
                    for r in range(i) {
                        for c in range(j) {
                            buf.push(s[[r, c]]);
                        }
                    }
                    median_of(&mut buf)
                })
                .collect()
        })
        .collect();
    let mut values = Array2::zeros((l, l));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Ok(SelfSimilarityMatrix { values, filtered: true })
}

/// Gaussian-tapered checkerboard of size (2κ+1)², indexed by offsets in `[-κ, κ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckerboardKernel<T> {
    pub values: Array2<T>,
    pub kappa: usize,
    pub sigma: f64,
    /// Whether same-sign entries were rescaled so that the kernel sums to zero.
    pub balanced: bool,
}

impl<T: Scalar> CheckerboardKernel<T> {
    /// `g[i,j] = sgn(i)·sgn(j)·exp(−(i−j)²/σ)`, zero where `|i| ≤ 1` or `|j| ≤ 1`.
    ///
    /// This kernel does not sum to zero, so a constant SSM gives a nonzero response.
    pub fn unbalanced(kappa: usize, sigma: f64) -> Result<Self, SegmentationError> {
        Ok(Self {
            values: raw_kernel(kappa, sigma)?.mapv(T::lit),
            kappa,
            sigma,
            balanced: false,
        })
    }

    /// Value at offsets `(i, j)`.
    pub fn at(&self, i: isize, j: isize) -> T {
        let k = self.kappa as isize;
        self.values[[(i + k) as usize, (j + k) as usize]]
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }
}

fn raw_kernel(kappa: usize, sigma: f64) -> Result<Array2<f64>, SegmentationError> {
    if kappa < 2 {
        return Err(SegmentationError::InvalidParams(format!("kappa {kappa} must be >= 2")));
    }
    if !(sigma > 0.0) {
        return Err(SegmentationError::InvalidParams(format!("sigma {sigma} must be positive")));
    }
    let k = kappa as isize;
    let n = 2 * kappa + 1;
    Ok(Array2::from_shape_fn((n, n), |(r, c)| {
        let (i, j) = (r as isize - k, c as isize - k);
        if i.abs() <= 1 || j.abs() <= 1 {
            return 0.0;
        }
        let sign = (i.signum() * j.signum()) as f64;
        let d = (i - j) as f64;
        sign * (-d * d / sigma).exp()
    }))
}

/// Zero-sum checkerboard kernel.
///
/// Opposite-sign (cross-segment) entries follow the Gaussian-tapered formula
/// exactly; same-sign (within-segment) entries are scaled by one common factor
/// so that their total cancels the opposite-sign total.
pub fn build_kernel<T: Scalar>(kappa: usize, sigma: f64) -> Result<CheckerboardKernel<T>, SegmentationError> {
    let raw = raw_kernel(kappa, sigma)?;
    let positive: f64 = raw.iter().filter(|&&v| v > 0.0).sum();
    let negative: f64 = raw.iter().filter(|&&v| v < 0.0).sum();
    let scale = -negative / positive;
    Ok(CheckerboardKernel {
        values: raw.mapv(|v| T::lit(if v > 0.0 { v * scale } else { v })),
        kappa,
        sigma,
        balanced: true,
    })
}

/// Rectified, sign-flipped kernel response: `[−η]_+`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyCurve<T> {
    pub values: Vec<T>,
    /// η before negation and rectification.
    pub raw: Vec<T>,
}

impl<T: Scalar> NoveltyCurve<T> {
    pub fn from_values(values: Vec<T>) -> Self {
        Self {
            raw: values.iter().map(|&v| -v).collect(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `η[ν] = Σ_{i,j} S̄[ν+i, ν+j]·g[i,j]` with out-of-range indices clamped to the matrix edge.
pub fn novelty<T: Scalar>(ssm: &SelfSimilarityMatrix<T>, kernel: &CheckerboardKernel<T>) -> NoveltyCurve<T> {
    let l = ssm.len();
    let k = kernel.kappa as isize;
    let s = &ssm.values;
    let g = &kernel.values;
    let clamp = |x: isize| x.clamp(0, l as isize - 1) as usize;
    let raw: Vec<T> = (0..l as isize)
        .into_par_iter()
        .map(|nu| {
            let mut acc = T::zero();
            for i in -k..=k {
                let r = clamp(nu + i);
                let grow = g.row((i + k) as usize);
                for j in -k..=k {
                    let w = grow[(j + k) as usize];
                    if w != T::zero() {
                        acc = acc + s[[r, clamp(nu + j)]] * w;
                    }
                }
            }
            acc
        })
        .collect();
    let values = raw.iter().map(|&v| (-v).max(T::zero())).collect();
    NoveltyCurve { values, raw }
}

/// Detected boundaries as frame (beat) indices, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundarySet {
    pub beat_indices: Vec<usize>,
}

/// Peaks whose value exceeds `tau` times the mean over `[ν−T, ν+T]` (clipped at the edges).
///
/// A peak is a run of equal values whose neighbours on both sides are strictly
/// lower (or absent); the run is reported at index `start + len/2`, so an
/// isolated maximum is reported at itself.
pub fn pick_peaks<T: Scalar>(curve: &[T], half_window: usize, tau: f64) -> Result<BoundarySet, SegmentationError> {
    if half_window == 0 {
        return Err(SegmentationError::InvalidParams("peak window T must be >= 1".into()));
    }
    if !(tau > 0.0) {
        return Err(SegmentationError::InvalidParams(format!("threshold {tau} must be positive")));
    }
    let n = curve.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && curve[end] == curve[start] {
            end += 1;
        }
        let v = curve[start];
        let left_lower = start == 0 || curve[start - 1] < v;
        let right_lower = end == n || curve[end] < v;
        // A run spanning the whole curve is flat, not a peak.
        if left_lower && right_lower && !(start == 0 && end == n) {
            let nu = start + (end - start) / 2;
            let lo = nu.saturating_sub(half_window);
            let hi = (nu + half_window).min(n - 1);
            let sum: f64 = curve[lo..=hi].iter().map(|x| x.as_f64()).sum();
            if sum > 0.0 && (hi - lo + 1) as f64 * v.as_f64() / sum > tau {
                out.push(nu);
            }
        }
        start = end;
    }
    Ok(BoundarySet { beat_indices: out })
}

pub fn boundaries_to_times(bounds: &BoundarySet, beats: &BeatGrid) -> Result<Vec<f64>, SegmentationError> {
    bounds
        .beat_indices
        .iter()
        .map(|&i| {
            beats
                .times()
                .get(i)
                .copied()
                .ok_or(SegmentationError::IndexOutOfRange { index: i, len: beats.len() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub median_window: usize,
    pub kappa: usize,
    pub sigma: f64,
    pub peak_window: usize,
    pub threshold: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            median_window: 8,
            kappa: 40,
            sigma: 18.5,
            peak_window: 10,
            threshold: 1.35,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if self.median_window == 0 || self.peak_window == 0 {
            return Err(SegmentationError::InvalidParams("windows must be >= 1".into()));
        }
        raw_kernel(self.kappa, self.sigma)?;
        if !(self.threshold > 0.0) {
            return Err(SegmentationError::InvalidParams(format!("threshold {}", self.threshold)));
        }
        Ok(())
    }
}

/// Every intermediate of one detection run.
#[derive(Debug, Clone)]
pub struct Detection<T> {
    pub ssm: SelfSimilarityMatrix<T>,
    pub filtered: SelfSimilarityMatrix<T>,
    pub novelty: NoveltyCurve<T>,
    pub boundaries: BoundarySet,
}

/// SSM, median filter, novelty and peak picking over per-frame feature rows.
pub fn detect<T: Scalar>(features: ArrayView2<'_, T>, params: &SegmentationParams) -> Result<Detection<T>, SegmentationError> {
    params.validate()?;
    if features.nrows() < 2 {
        return Err(SegmentationError::TooShort {
            needed: 2,
            got: features.nrows(),
        });
    }
    let ssm = compute_ssm(features);
    let filtered = median_filter(&ssm, params.median_window)?;
    let kernel = build_kernel(params.kappa, params.sigma)?;
    let novelty = novelty(&filtered, &kernel);
    let boundaries = pick_peaks(&novelty.values, params.peak_window, params.threshold)?;
    Ok(Detection {
        ssm,
        filtered,
        novelty,
        boundaries,
    })
}

/// `beat_index,time_sec` rows.
pub fn write_boundaries_csv(path: impl AsRef<Path>, bounds: &BoundarySet, times: &[f64]) -> Result<(), SegmentationError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "beat_index,time_sec")?;
    for (i, t) in bounds.beat_indices.iter().zip(times) {
        writeln!(w, "{i},{t:.6}")?;
    }
    w.flush()?;
    Ok(())
}

/// `beat_index,time_sec,novelty,raw` rows.
pub fn write_novelty_csv<T: Scalar>(path: impl AsRef<Path>, curve: &NoveltyCurve<T>, times: &[f64]) -> Result<(), SegmentationError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "beat_index,time_sec,novelty,raw")?;
    for (i, ((v, r), t)) in curve.values.iter().zip(&curve.raw).zip(times).enumerate() {
        writeln!(w, "{i},{t:.6},{v},{r}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `beat_index,time_sec` rows back, returning the times.
pub fn read_boundaries_csv(path: impl AsRef<Path>) -> Result<Vec<f64>, SegmentationError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let t = line
            .split(',')
            .nth(1)
            .and_then(|f| f.trim().parse::<f64>().ok())
            .ok_or_else(|| SegmentationError::InvalidParams(format!("line {}: bad boundary row '{line}'", n + 1)))?;
        out.push(t);
    }
    Ok(out)
}
