use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::BeatGrid;
use crate::audio::AudioBuffer;

/// Onset-envelope / tempo / dynamic-programming beat tracker settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatTrackerConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub min_bpm: f64,
    pub max_bpm: f64,
    /// Centre of the log-Gaussian tempo prior.
    pub prior_bpm: f64,
    /// Width of the tempo prior in octaves.
    pub prior_octaves: f64,
    /// Weight of the squared log inter-beat deviation in the DP.
    pub tightness: f64,
    /// Grid period used when no pulse can be found.
    pub fallback_period: f64,
}

impl Default for BeatTrackerConfig {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            hop: 256,
            min_bpm: 60.0,
            max_bpm: 180.0,
            prior_bpm: 120.0,
            prior_octaves: 1.0,
            tightness: 100.0,
            fallback_period: 0.5,
        }
    }
}

/// Beat times for `audio` with the default tracker.
pub fn track_beats(audio: &AudioBuffer) -> BeatGrid {
    BeatTrackerConfig::default().track(audio)
}

impl BeatTrackerConfig {
    pub fn track(&self, audio: &AudioBuffer) -> BeatGrid {
        let duration = audio.duration_sec();
        let fallback = || BeatGrid::uniform(self.fallback_period, duration);
        let envelope = self.onset_envelope(&audio.samples);
        let fps = audio.sample_rate as f64 / self.hop as f64;

        let peak = envelope.iter().cloned().fold(0.0, f64::max);
        if envelope.len() < 4 || peak < 1e-9 {
            return fallback();
        }
        let mean = envelope.iter().sum::<f64>() / envelope.len() as f64;
        let std = (envelope.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / envelope.len() as f64).sqrt();
        if std < 1e-12 {
            return fallback();
        }
        let onset: Vec<f64> = envelope.iter().map(|v| v / std).collect();

        let Some(period) = self.estimate_period(&onset, fps) else {
            return fallback();
        };
        let frames = self.dp_beats(&onset, period);
        let times: Vec<f64> = frames
            .into_iter()
            .map(|m| m as f64 / fps)
            .filter(|&t| t <= duration)
            .collect();
        if times.len() < 2 {
            return fallback();
        }
        BeatGrid::new(times).unwrap_or_else(|_| fallback())
    }

    /// Half-wave rectified log-spectral flux, one value per STFT frame.
    fn onset_envelope(&self, samples: &[f32]) -> Vec<f64> {
        let n_fft = self.n_fft;
        let half = n_fft / 2;
        if samples.is_empty() {
            return Vec::new();
        }
        let n_frames = samples.len() / self.hop + 1;
        let window: Vec<f64> = (0..n_fft)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
            .collect();
        let wsum: f64 = window.iter().sum();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut prev = vec![0.0f64; half + 1];
        let mut cur = vec![0.0f64; half + 1];
        let mut flux = Vec::with_capacity(n_frames);
        for m in 0..n_frames {
            let start = (m * self.hop) as isize - half as isize;
            for (i, slot) in buf.iter_mut().enumerate() {
                let j = start + i as isize;
                let x = if j >= 0 && (j as usize) < samples.len() {
                    samples[j as usize] as f64
                } else {
                    0.0
                };
                *slot = Complex::new(x * window[i], 0.0);
            }
            fft.process(&mut buf);
            for (k, c) in cur.iter_mut().enumerate() {
                *c = (1.0 + 1000.0 * buf[k].norm() / wsum).ln();
            }
            let f = if m == 0 {
                0.0
            } else {
                cur.iter().zip(&prev).map(|(c, p)| (c - p).max(0.0)).sum()
            };
            flux.push(f);
            std::mem::swap(&mut prev, &mut cur);
        }
        flux
    }

    /// Beat period in frames from the autocorrelation, weighted by a log-Gaussian tempo prior.
    fn estimate_period(&self, onset: &[f64], fps: f64) -> Option<f64> {
        let lag_min = (60.0 * fps / self.max_bpm).floor().max(1.0) as usize;
        let lag_max = (60.0 * fps / self.min_bpm).ceil() as usize;
        if lag_max + 1 >= onset.len() {
            return None;
        }
        let prior_lag = 60.0 * fps / self.prior_bpm;
        let score = |lag: usize| -> f64 {
            let n = onset.len() - lag;
            let ac: f64 = (0..n).map(|m| onset[m] * onset[m + lag]).sum::<f64>() / n as f64;
            let octaves = (lag as f64 / prior_lag).log2() / self.prior_octaves;
            ac * (-0.5 * octaves * octaves).exp()
        };
        let scores: Vec<f64> = (lag_min - 1..=lag_max + 1).map(score).collect();
        let best = (1..scores.len() - 1).max_by(|&a, &b| scores[a].total_cmp(&scores[b]))?;
        if scores[best] <= 0.0 {
            return None;
        }
        let (a, b, c) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
        Some((lag_min - 1 + best) as f64 + delta.clamp(-0.5, 0.5))
    }

    /// Dynamic programming over onset strength with a squared log-interval penalty.
    fn dp_beats(&self, onset: &[f64], period: f64) -> Vec<usize> {
        let n = onset.len();
        let min_step = (period / 2.0).round().max(1.0) as usize;
        let max_step = (2.0 * period).round() as usize;
        let mut cum = vec![0.0f64; n];
        let mut back = vec![usize::MAX; n];
        for m in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            if m >= min_step {
                let lo = m.saturating_sub(max_step);
                for prev in lo..=m - min_step {
                    let dev = ((m - prev) as f64 / period).ln();
                    let cand = cum[prev] - self.tightness * dev * dev;
                    if cand > best {
                        best = cand;
                        arg = prev;
                    }
                }
            }
            if arg == usize::MAX {
                cum[m] = onset[m];
            } else {
                cum[m] = onset[m] + best;
                back[m] = arg;
            }
        }
        let tail = (period.round() as usize).min(n - 1);
        let mut m = (n - 1 - tail..n)
            .max_by(|&a, &b| cum[a].total_cmp(&cum[b]))
            .unwrap_or(n - 1);
        let mut beats = vec![m];
        while back[m] != usize::MAX {
            m = back[m];
            beats.push(m);
        }
        beats.reverse();
        beats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::ANALYSIS_RATE;

    fn click_track(bpm: f64, secs: f64, offset: f64) -> AudioBuffer {
        let sr = ANALYSIS_RATE as f64;
        let mut s = vec![0.0f32; (secs * sr) as usize];
        let period = 60.0 / bpm;
        let mut t = offset;
        while t < secs {
            let start = (t * sr) as usize;
            for i in 0..200 {
                if let Some(x) = s.get_mut(start + i) {
                    let env = (-(i as f64) / 40.0).exp();
                    *x += (0.9 * env * (2.0 * PI * 1500.0 * i as f64 / sr).sin()) as f32;
                }
            }
            t += period;
        }
        AudioBuffer::new(s, ANALYSIS_RATE)
    }

    fn median_interval(g: &BeatGrid) -> f64 {
        let mut d: Vec<f64> = g.times().windows(2).map(|w| w[1] - w[0]).collect();
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    #[test]
    fn click_track_120_bpm() {
        let g = track_beats(&click_track(120.0, 10.0, 0.0));
        assert!((18..=22).contains(&g.len()), "{} beats", g.len());
        assert!((median_interval(&g) - 0.5).abs() <= 0.02);
    }

    #[test]
    fn silence_falls_back_to_uniform_grid() {
        let g = track_beats(&AudioBuffer::new(vec![0.0; 10 * ANALYSIS_RATE as usize], ANALYSIS_RATE));
        assert_eq!(g, BeatGrid::uniform(0.5, 10.0));
    }

    #[test]
    fn time_shift_moves_beats() {
        let a = track_beats(&click_track(120.0, 10.0, 0.2));
        let b = track_beats(&click_track(120.0, 10.0, 0.3));
        // Compare beats that have a counterpart 0.1 s later.
        let mut matched = 0;
        for &t in a.times() {
            if let Some(j) = b.nearest(t + 0.1) {
                let d = b.times()[j] - t;
                if (d - 0.1).abs() <= 0.03 {
                    matched += 1;
                }
            }
        }
        assert!(matched + 1 >= a.len().min(b.len()), "matched {matched} of {}", a.len());
    }

    #[test]
    fn output_is_strictly_increasing_within_duration() {
        for bpm in [72.0, 100.0, 150.0] {
            let audio = click_track(bpm, 8.0, 0.13);
            let g = track_beats(&audio);
            assert!(g.times().windows(2).all(|w| w[1] > w[0]));
            assert!(g.times().iter().all(|&t| (0.0..=audio.duration_sec()).contains(&t)));
        }
    }
}
