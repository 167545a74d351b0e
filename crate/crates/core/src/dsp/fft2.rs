use std::sync::Arc;

use ndarray::ArrayView2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::DspError;

/// Floor added before the log of the 2D spectrum magnitude.
pub const TWODFT_EPSILON: f64 = 1e-6;

/// `log(|DFT2(x)| + ε)` of a bins × frames segment, flattened bins-major.
///
/// The magnitude of a 2D DFT is invariant to circular shifts in either axis,
/// which makes the feature insensitive to where a pattern sits inside the
/// segment (beat phase, transposition by whole bins).
pub struct TwoDimDftFeature {
    bins: usize,
    frames: usize,
    along_frames: Arc<dyn Fft<f64>>,
    along_bins: Arc<dyn Fft<f64>>,
}

impl TwoDimDftFeature {
    pub fn new(bins: usize, frames: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            bins,
            frames,
            along_frames: planner.plan_fft_forward(frames),
            along_bins: planner.plan_fft_forward(bins),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn compute(&self, segment: ArrayView2<'_, f32>) -> Result<Vec<f64>, DspError> {
        if segment.dim() != (self.bins, self.frames) {
            return Err(DspError::ShapeMismatch {
                expected: (self.bins, self.frames),
                actual: segment.dim(),
            });
        }
        let (rows, cols) = (self.bins, self.frames);
        let mut buf: Vec<Complex<f64>> = segment
            .iter()
            .map(|&v| Complex::new(v as f64, 0.0))
            .collect();
        // rows are contiguous
        self.along_frames.process(&mut buf);
        let mut column = vec![Complex::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = buf[r * cols + c];
            }
            self.along_bins.process(&mut column);
            for r in 0..rows {
                buf[r * cols + c] = column[r];
            }
        }
        Ok(buf.iter().map(|z| (z.norm() + TWODFT_EPSILON).ln()).collect())
    }
}

/// One-shot convenience over [`TwoDimDftFeature`].
pub fn twodfft_feature(segment: ArrayView2<'_, f32>) -> Vec<f64> {
    let (b, f) = segment.dim();
    TwoDimDftFeature::new(b, f)
        .compute(segment)
        .expect("planner built for this shape")
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_segment(bins: usize, frames: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((bins, frames), |_| rng.gen_range(-14.0f32..0.0))
    }

    #[test]
    fn zero_input_gives_constant_log_epsilon() {
        let f = twodfft_feature(Array2::<f32>::zeros((72, 64)).view());
        assert_eq!(f.len(), 72 * 64);
        assert!(f.iter().all(|&v| v == TWODFT_EPSILON.ln()));
    }

    #[test]
    fn identical_segments_have_zero_distance() {
        let s = random_segment(12, 16, 3);
        assert_eq!(euclidean(&twodfft_feature(s.view()), &twodfft_feature(s.view())), 0.0);
    }

    #[test]
    fn dc_term_matches_sum() {
        let s = random_segment(6, 8, 9);
        let f = twodfft_feature(s.view());
        let total: f64 = s.iter().map(|&v| v as f64).sum();
        assert!((f[0] - (total.abs() + TWODFT_EPSILON).ln()).abs() < 1e-9);
    }

    #[test]
    fn circular_shift_invariance_both_axes() {
        let s = random_segment(72, 64, 11);
        let base = twodfft_feature(s.view());
        for (dr, dc) in [(0, 1), (0, 17), (5, 0), (71, 63), (13, 40)] {
            let shifted = Array2::from_shape_fn((72, 64), |(r, c)| s[[(r + dr) % 72, (c + dc) % 64]]);
            let f = twodfft_feature(shifted.view());
            let worst = base.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-6, "shift ({dr},{dc}) worst {worst}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let feat = TwoDimDftFeature::new(72, 64);
        let err = feat.compute(Array2::<f32>::zeros((72, 63)).view()).unwrap_err();
        assert!(matches!(err, DspError::ShapeMismatch { .. }));
    }
}
