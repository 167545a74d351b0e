use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;

use super::DspError;
use crate::audio::AudioBuffer;

/// Constant-Q filterbank configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqtParams {
    pub f_min: f64,
    pub bins_per_octave: usize,
    pub n_octaves: usize,
    /// Ratio of centre frequency to bandwidth.
    pub q_factor: f64,
}

impl Default for CqtParams {
    fn default() -> Self {
        Self {
            f_min: 40.0,
            bins_per_octave: 12,
            n_octaves: 6,
            q_factor: Self::semitone_q(12),
        }
    }
}

impl CqtParams {
    /// Q giving one-bin bandwidth at the given resolution: `1 / (2^(1/b) - 1)`.
    pub fn semitone_q(bins_per_octave: usize) -> f64 {
        1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0)
    }

    pub fn n_bins(&self) -> usize {
        self.bins_per_octave * self.n_octaves
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        self.f_min * 2f64.powf(k as f64 / self.bins_per_octave as f64)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        if !(self.f_min > 0.0) || self.bins_per_octave == 0 || self.n_octaves == 0 {
            return Err(DspError::InvalidParams(format!("{self:?}")));
        }
        if !(self.q_factor > 0.0) {
            return Err(DspError::InvalidParams("q_factor must be positive".into()));
        }
        let top = self.bin_frequency(self.n_bins() - 1);
        if top >= sample_rate as f64 / 2.0 {
            return Err(DspError::InvalidParams(format!(
                "highest bin {top:.1} Hz at or above Nyquist for {sample_rate} Hz"
            )));
        }
        Ok(())
    }
}

/// Frames × bins magnitude array with the time of each frame centre.
#[derive(Debug, Clone, PartialEq)]
pub struct CqtMatrix {
    pub magnitudes: Array2<f32>,
    pub frame_centers: Vec<f64>,
}

impl CqtMatrix {
    pub fn n_frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.magnitudes.ncols()
    }
}

struct BinKernel {
    re: Vec<f32>,
    im: Vec<f32>,
}

/// Precomputed complex Hann-windowed kernels, one per bin.
///
/// Bin `k` has a window of `q·sr/f_k` samples; each kernel is normalised by its
/// window sum, so a sinusoid of amplitude `A` at a bin centre reads roughly `A/2`.
pub struct Cqt {
    params: CqtParams,
    sample_rate: u32,
    kernels: Vec<BinKernel>,
}

impl Cqt {
    pub fn new(params: CqtParams, sample_rate: u32) -> Result<Self, DspError> {
        params.validate(sample_rate)?;
        let sr = sample_rate as f64;
        let kernels = (0..params.n_bins())
            .map(|k| {
                let f = params.bin_frequency(k);
                let n = ((params.q_factor * sr / f).round() as usize).max(1);
                let mid = (n as f64 - 1.0) / 2.0;
                let window: Vec<f64> = (0..n)
                    .map(|i| {
                        if n == 1 {
                            1.0
                        } else {
                            0.5 - 0.5 * (2.0 * PI * i as f64 / (n as f64 - 1.0)).cos()
                        }
                    })
                    .collect();
                let norm: f64 = window.iter().sum();
                let (re, im) = window
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let phase = -2.0 * PI * f * (i as f64 - mid) / sr;
                        ((w * phase.cos() / norm) as f32, (w * phase.sin() / norm) as f32)
                    })
                    .unzip();
                BinKernel { re, im }
            })
            .collect();
        Ok(Self {
            params,
            sample_rate,
            kernels,
        })
    }

    pub fn params(&self) -> &CqtParams {
        &self.params
    }

    fn frame_into(&self, samples: &[f32], center: isize, out: &mut [f32]) {
        for (kernel, slot) in self.kernels.iter().zip(out.iter_mut()) {
            let n = kernel.re.len() as isize;
            let start = center - n / 2;
            // Clip the kernel to the signal; out-of-range samples count as zero.
            let lo = (-start).max(0) as usize;
            let hi = (samples.len() as isize - start).clamp(0, n) as usize;
            let (mut re, mut im) = (0.0f32, 0.0f32);
            if lo < hi {
                let s = &samples[(start + lo as isize) as usize..(start + hi as isize) as usize];
                for ((x, kr), ki) in s.iter().zip(&kernel.re[lo..hi]).zip(&kernel.im[lo..hi]) {
                    re += x * kr;
                    im += x * ki;
                }
            }
            *slot = (re * re + im * im).sqrt();
        }
    }

    /// One frame per centre time (seconds).
    pub fn at_times(&self, audio: &AudioBuffer, centers: &[f64]) -> Result<CqtMatrix, DspError> {
        if audio.sample_rate != self.sample_rate {
            return Err(DspError::InvalidParams(format!(
                "audio at {} Hz, kernels built for {} Hz",
                audio.sample_rate, self.sample_rate
            )));
        }
        let duration = audio.duration_sec();
        if let Some(&bad) = centers.iter().find(|&&t| !(0.0..=duration).contains(&t)) {
            return Err(DspError::CenterOutOfRange(bad, duration));
        }
        if centers.windows(2).any(|w| w[1] < w[0]) {
            return Err(DspError::UnsortedCenters);
        }
        let n_bins = self.params.n_bins();
        let mut magnitudes = Array2::<f32>::zeros((centers.len(), n_bins));
        let sr = self.sample_rate as f64;
        magnitudes
            .as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(n_bins)
            .zip(centers.par_iter())
            .for_each(|(row, &t)| {
                self.frame_into(&audio.samples, (t * sr).round() as isize, row);
            });
        Ok(CqtMatrix {
            magnitudes,
            frame_centers: centers.to_vec(),
        })
    }

    pub fn fixed_hop(&self, audio: &AudioBuffer, hop_sec: f64) -> Result<CqtMatrix, DspError> {
        self.at_times(audio, &fixed_hop_centers(audio.duration_sec(), hop_sec)?)
    }
}

pub(crate) fn fixed_hop_centers(duration: f64, hop_sec: f64) -> Result<Vec<f64>, DspError> {
    if !(hop_sec > 0.0) {
        return Err(DspError::InvalidParams(format!("hop {hop_sec} s must be positive")));
    }
    let n = (duration / hop_sec + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| i as f64 * hop_sec)
        .filter(|&t| t <= duration)
        .collect())
}

/// Beat-synchronous entry point: CQT frames centred at arbitrary times.
pub fn cqt_at_times(
    audio: &AudioBuffer,
    params: &CqtParams,
    centers: &[f64],
) -> Result<CqtMatrix, DspError> {
    Cqt::new(*params, audio.sample_rate)?.at_times(audio, centers)
}

/// Frames at `0, hop, 2·hop, …` up to the end of the signal.
pub fn cqt_fixed_hop(
    audio: &AudioBuffer,
    params: &CqtParams,
    hop_sec: f64,
) -> Result<CqtMatrix, DspError> {
    Cqt::new(*params, audio.sample_rate)?.fixed_hop(audio, hop_sec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::ANALYSIS_RATE;

    fn tone(freq: f64, secs: f64, amp: f32) -> AudioBuffer {
        let n = (ANALYSIS_RATE as f64 * secs) as usize;
        AudioBuffer::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / ANALYSIS_RATE as f64).sin() as f32)
                .collect(),
            ANALYSIS_RATE,
        )
    }

    #[test]
    fn default_params() {
        let p = CqtParams::default();
        assert_eq!(p.n_bins(), 72);
        assert!((p.q_factor - 16.817).abs() < 1e-3);
        assert!(p.validate(ANALYSIS_RATE).is_ok());
        assert!(p.validate(4000).is_err());
    }

    #[test]
    fn silence_gives_zero_magnitudes() {
        let audio = AudioBuffer::new(vec![0.0; 22050], ANALYSIS_RATE);
        let m = cqt_at_times(&audio, &CqtParams::default(), &[0.0, 0.3, 1.0]).unwrap();
        assert_eq!(m.magnitudes.dim(), (3, 72));
        assert!(m.magnitudes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn a440_peaks_between_bins_41_and_42() {
        // 12·log2(440/40) ≈ 41.51
        let audio = tone(440.0, 2.0, 0.8);
        let m = cqt_at_times(&audio, &CqtParams::default(), &[1.0]).unwrap();
        let row = m.magnitudes.row(0);
        let argmax = (0..72).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert!(argmax == 41 || argmax == 42, "argmax {argmax}");
    }

    #[test]
    fn on_bin_tone_reads_half_amplitude() {
        let p = CqtParams::default();
        let f = p.bin_frequency(30);
        let m = cqt_at_times(&tone(f, 2.0, 0.6), &p, &[1.0]).unwrap();
        assert!((m.magnitudes[[0, 30]] - 0.3).abs() < 0.01);
    }

    #[test]
    fn identical_centers_identical_frames() {
        let audio = tone(300.0, 1.0, 0.5);
        let m = cqt_at_times(&audio, &CqtParams::default(), &[0.4, 0.4]).unwrap();
        assert_eq!(m.magnitudes.row(0), m.magnitudes.row(1));
    }

    #[test]
    fn rejects_out_of_range_and_unsorted_centers() {
        let audio = tone(300.0, 1.0, 0.5);
        let p = CqtParams::default();
        assert!(matches!(cqt_at_times(&audio, &p, &[1.5]), Err(DspError::CenterOutOfRange(..))));
        assert!(matches!(cqt_at_times(&audio, &p, &[-0.1]), Err(DspError::CenterOutOfRange(..))));
        assert!(matches!(cqt_at_times(&audio, &p, &[0.5, 0.2]), Err(DspError::UnsortedCenters)));
    }

    #[test]
    fn fixed_hop_frame_counts() {
        let audio = tone(300.0, 1.0, 0.5);
        let p = CqtParams::default();
        assert_eq!(cqt_fixed_hop(&audio, &p, 0.1).unwrap().n_frames(), 11);
        // floor(1 / 0.0036) + 1
        assert_eq!(cqt_fixed_hop(&audio, &p, 0.0036).unwrap().n_frames(), 278);
        assert!(cqt_fixed_hop(&audio, &p, 0.0).is_err());
    }

    #[test]
    fn fixed_hop_matches_explicit_centers() {
        let audio = tone(523.0, 1.0, 0.5);
        let p = CqtParams::default();
        let a = cqt_fixed_hop(&audio, &p, 0.1).unwrap();
        let b = cqt_at_times(&audio, &p, &a.frame_centers).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn magnitude_is_amplitude_linear() {
        let x = tone(187.0, 1.0, 0.25);
        let y = AudioBuffer::new(x.samples.iter().map(|s| 2.0 * s).collect(), ANALYSIS_RATE);
        let p = CqtParams::default();
        let c = [0.0, 0.37, 0.5, 1.0];
        let a = cqt_at_times(&x, &p, &c).unwrap();
        let b = cqt_at_times(&y, &p, &c).unwrap();
        for (u, v) in a.magnitudes.iter().zip(b.magnitudes.iter()) {
            let rel = (2.0 * u - v).abs() / v.abs().max(f32::MIN_POSITIVE);
            assert!(*v == 0.0 || rel <= 1e-6, "{u} {v}");
        }
    }
}
