//! WAV decoding, downmixing and sample-rate conversion.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

/// Analysis rate used by every stage downstream of ingest.
pub const ANALYSIS_RATE: u32 = 22050;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono samples in [-1, 1] at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a PCM16 or float32 WAV file, downmixes to mono and resamples.
pub fn load_audio(path: impl AsRef<Path>, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    let file = std::fs::File::open(path.as_ref())?;
    decode_wav(std::io::BufReader::new(file), target_rate)
}

pub fn decode_wav<R: Read>(reader: R, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    let reader = hound::WavReader::new(reader).map_err(hound_error)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels",
            spec.channels
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(hound_error)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(hound_error)?,
        (format, bits) => {
            return Err(AudioError::UnsupportedFormat(format!(
                "{bits}-bit {format:?}"
            )))
        }
    };
    let mono = downmix(&interleaved, spec.channels as usize);
    if mono.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let mut samples = resample(&mono, spec.sample_rate, target_rate);
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(AudioBuffer::new(samples, target_rate))
}

fn hound_error(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        other => AudioError::UnsupportedFormat(other.to_string()),
    }
}

fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

/// Zero crossings of the sinc on each side of the interpolation point.
const SINC_HALF_WIDTH: f64 = 16.0;

/// Band-limited resampling by Blackman-windowed sinc interpolation.
pub fn resample(samples: &[f32], from_rate: u32, to_rate: u32) -> Vec<f32> {
    if from_rate == to_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = to_rate as f64 / from_rate as f64;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    // Cutoff as a fraction of the input Nyquist; slightly below to leave a transition band.
    let cutoff = ratio.min(1.0) * 0.95;
    let reach = SINC_HALF_WIDTH / cutoff;
    let n_in = samples.len() as isize;

    (0..out_len)
        .map(|n| {
            let x = n as f64 / ratio;
            let lo = ((x - reach).ceil() as isize).max(0);
            let hi = ((x + reach).floor() as isize).min(n_in - 1);
            let mut acc = 0.0f64;
            for j in lo..=hi {
                let t = x - j as f64;
                acc += samples[j as usize] as f64 * cutoff * sinc(cutoff * t) * blackman(t / reach);
            }
            acc as f32
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on [-1, 1].
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let phase = PI * (u + 1.0);
    0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos()
}

/// Writes 16-bit PCM mono.
pub fn write_wav_pcm16(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(hound_error)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(hound_error)?;
    }
    w.finalize().map_err(hound_error)
}

/// Writes interleaved float32 with the given channel count.
pub fn write_wav_f32(
    path: impl AsRef<Path>,
    interleaved: &[f32],
    channels: u16,
    sample_rate: u32,
) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(hound_error)?;
    for &s in interleaved {
        w.write_sample(s).map_err(hound_error)?;
    }
    w.finalize().map_err(hound_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, rate: u32, secs: f64, amp: f32) -> Vec<f32> {
        let n = (rate as f64 * secs) as usize;
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect()
    }

    fn write_pcm16_stereo(path: &Path, left: &[f32], right: &[f32], rate: u32) {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for (l, r) in left.iter().zip(right) {
            w.write_sample((l * 32767.0) as i16).unwrap();
            w.write_sample((r * 32767.0) as i16).unwrap();
        }
        w.finalize().unwrap();
    }

    fn peak_frequency(samples: &[f32], rate: u32) -> f64 {
        let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let half = buf.len() / 2;
        let k = (1..half)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        // parabolic refinement on log magnitude
        let (a, b, c) = (buf[k - 1].norm().ln(), buf[k].norm().ln(), buf[k + 1].norm().ln());
        let delta = 0.5 * (a - c) / (a - 2.0 * b + c);
        (k as f64 + delta) * rate as f64 / buf.len() as f64
    }

    #[test]
    fn stereo_48k_downmixes_and_resamples_to_expected_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let l = sine(220.0, 48000, 2.0, 0.5);
        let r = sine(330.0, 48000, 2.0, 0.5);
        write_pcm16_stereo(&path, &l, &r, 48000);
        let buf = load_audio(&path, ANALYSIS_RATE).unwrap();
        assert_eq!(buf.len(), 44100);
        assert_eq!(buf.sample_rate, ANALYSIS_RATE);
        assert!((buf.duration_sec() - 2.0).abs() < 1.0 / ANALYSIS_RATE as f64);
    }

    #[test]
    fn silence_stays_silent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        write_wav_f32(&path, &vec![0.0; 8000], 1, 16000).unwrap();
        let buf = load_audio(&path, ANALYSIS_RATE).unwrap();
        assert!(!buf.is_empty());
        assert!(buf.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_sine_rms_after_resampling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        write_wav_f32(&path, &sine(440.0, 44100, 1.0, 1.0), 1, 44100).unwrap();
        let buf = load_audio(&path, ANALYSIS_RATE).unwrap();
        let rms = (buf.samples.iter().map(|s| (*s as f64).powi(2)).sum::<f64>() / buf.len() as f64).sqrt();
        let expected = 1.0 / 2f64.sqrt();
        assert!((rms - expected).abs() / expected < 0.01, "rms {rms}");
    }

    #[test]
    fn tone_frequency_preserved_by_resampling() {
        for (f, from) in [(440.0, 44100), (1234.5, 48000), (97.0, 16000)] {
            let x = sine(f, from, 2.0, 0.8);
            let y = resample(&x, from, ANALYSIS_RATE);
            let measured = peak_frequency(&y, ANALYSIS_RATE);
            assert!((measured - f).abs() / f < 1e-3, "{f} Hz measured {measured}");
        }
    }

    #[test]
    fn float_downmix_is_linear() {
        let dir = tempfile::tempdir().unwrap();
        let l = sine(300.0, 32000, 0.5, 0.3);
        let r = sine(510.0, 32000, 0.5, 0.2);
        let interleave = |scale: f32| -> Vec<f32> {
            l.iter().zip(&r).flat_map(|(a, b)| [a * scale, b * scale]).collect()
        };
        let p1 = dir.path().join("a.wav");
        let p2 = dir.path().join("b.wav");
        write_wav_f32(&p1, &interleave(1.0), 2, 32000).unwrap();
        write_wav_f32(&p2, &interleave(2.5), 2, 32000).unwrap();
        let a = load_audio(&p1, ANALYSIS_RATE).unwrap();
        let b = load_audio(&p2, ANALYSIS_RATE).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((2.5 * x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn float_input_above_unity_is_peak_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loud.wav");
        write_wav_f32(&path, &[0.5, -3.0, 1.5, 0.0], 1, ANALYSIS_RATE).unwrap();
        let buf = load_audio(&path, ANALYSIS_RATE).unwrap();
        assert_eq!(buf.samples, vec![0.5 / 3.0, -1.0, 0.5, 0.0]);
    }

    #[test]
    fn rejects_non_wav_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let bogus = dir.path().join("x.mp3");
        std::fs::write(&bogus, b"ID3\x03\x00 not a wav").unwrap();
        assert!(matches!(load_audio(&bogus, ANALYSIS_RATE), Err(AudioError::UnsupportedFormat(_))));

        let empty = dir.path().join("e.wav");
        write_wav_f32(&empty, &[], 1, ANALYSIS_RATE).unwrap();
        assert!(matches!(load_audio(&empty, ANALYSIS_RATE), Err(AudioError::EmptyAudio)));

        let missing = dir.path().join("missing.wav");
        assert!(matches!(load_audio(&missing, ANALYSIS_RATE), Err(AudioError::Io(_))));
    }

    #[test]
    fn rejects_24_bit_pcm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(1000i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_audio(&path, ANALYSIS_RATE), Err(AudioError::UnsupportedFormat(_))));
    }
}
