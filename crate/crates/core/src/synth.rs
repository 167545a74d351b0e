//! Procedural multi-section tracks with exact segment annotations.
//!
//! A track is a sequence of 4–8 sections at one tempo. Each section plays a
//! texture: a one-bar-per-chord loop with its own key, register, harmonic
//! timbre, note decay, rhythm and drum pattern. Section edges fall on bar
//! lines, so reference boundaries coincide with beats.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{self, AudioBuffer, AudioError, ANALYSIS_RATE};
use crate::dsp::{BeatGrid, DspError};
use crate::evaluation::{AnnotationSet, EvalError, Interval};

const STEPS_PER_BEAT: usize = 4;
const BEATS_PER_BAR: usize = 4;
const STEPS_PER_BAR: usize = STEPS_PER_BEAT * BEATS_PER_BAR;
const NOTE_SEC: f64 = 1.2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis settings: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Beats(#[from] DspError),
    #[error(transparent)]
    Annotation(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_tracks: usize,
    /// Size of the texture pool shared by all tracks.
    pub textures: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub target_duration_sec: f64,
    pub min_sections: usize,
    pub max_sections: usize,
    pub min_section_bars: usize,
    pub tempo_bpm: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tracks: 20,
            textures: 16,
            seed: 0,
            sample_rate: ANALYSIS_RATE,
            target_duration_sec: 180.0,
            min_sections: 4,
            max_sections: 8,
            min_section_bars: 4,
            tempo_bpm: (96.0, 132.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        if self.textures < 2 {
            return bad("need at least two textures");
        }
        if self.min_sections < 1 || self.min_sections > self.max_sections {
            return bad("section count range is empty");
        }
        if !(self.tempo_bpm.0 > 0.0 && self.tempo_bpm.0 <= self.tempo_bpm.1) {
            return bad("tempo range is empty");
        }
        if self.min_section_bars == 0 || !(self.target_duration_sec > 0.0) {
            return bad("durations must be positive");
        }
        Ok(())
    }
}

/// Sound and pattern of one section type.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    /// MIDI notes of each chord in the loop, one chord per bar.
    pub chords: Vec<Vec<u8>>,
    pub bass: bool,
    /// Relative amplitude of harmonics 1, 2, ….
    pub harmonics: Vec<f64>,
    pub decay_sec: f64,
    pub rhythm: [bool; STEPS_PER_BAR],
    pub kick: [bool; STEPS_PER_BAR],
    pub snare: [bool; STEPS_PER_BAR],
    pub hat: [bool; STEPS_PER_BAR],
    pub drum_level: f64,
    pub noise_seed: u64,
}

const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];

fn pattern(rng: &mut impl Rng, density: std::ops::Range<f64>) -> [bool; STEPS_PER_BAR] {
    let density = if density.is_empty() { density.start } else { rng.gen_range(density) };
    let mut p = [false; STEPS_PER_BAR];
    for (i, s) in p.iter_mut().enumerate() {
        // favour on-beat steps
        let d = if i % STEPS_PER_BEAT == 0 { (density * 1.6).min(1.0) } else { density };
        *s = rng.gen_bool(d);
    }
    p
}

impl Texture {
    pub fn random(rng: &mut impl Rng) -> Self {
        let key = rng.gen_range(0..12u8);
        let base = 12 * rng.gen_range(3..=6u8) + key;
        let sevenths = rng.gen_bool(0.4);
        let degrees: Vec<usize> = {
            let mut d = vec![0usize];
            d.extend((0..3).map(|_| rng.gen_range(0..7usize)));
            d
        };
        let chords = degrees
            .iter()
            .map(|&deg| {
                let n_tones = if sevenths { 4 } else { 3 };
                (0..n_tones)
                    .map(|k| {
                        let idx = deg + 2 * k;
                        base + MAJOR[idx % 7] + 12 * (idx / 7) as u8
                    })
                    .collect()
            })
            .collect();
        let n_harm = rng.gen_range(1..=10usize);
        let tilt = rng.gen_range(0.3..2.5);
        let odd_only = rng.gen_bool(0.3);
        let harmonics = (1..=n_harm)
            .map(|h| if odd_only && h % 2 == 0 { 0.0 } else { (h as f64).powf(-tilt) })
            .collect();
        let mut rhythm = pattern(rng, 0.15..0.7);
        rhythm[0] = true;
        Self {
            chords,
            bass: rng.gen_bool(0.6),
            harmonics,
            decay_sec: rng.gen_range(0.06..0.7),
            rhythm,
            kick: pattern(rng, 0.0..0.35),
            snare: pattern(rng, 0.0..0.25),
            hat: pattern(rng, 0.0..0.8),
            drum_level: rng.gen_range(0.0..0.6),
            noise_seed: rng.gen(),
        }
    }
}

fn midi_hz(m: u8) -> f64 {
    440.0 * 2f64.powf((m as f64 - 69.0) / 12.0)
}

/// Cached one-shot waveforms.
struct Voices {
    sr: f64,
    notes: HashMap<(usize, u8), Vec<f32>>,
    drums: HashMap<(usize, u8), Vec<f32>>,
}

impl Voices {
    fn new(sr: u32) -> Self {
        Self {
            sr: sr as f64,
            notes: HashMap::new(),
            drums: HashMap::new(),
        }
    }

    fn note(&mut self, tex_id: usize, tex: &Texture, midi: u8) -> &[f32] {
        let sr = self.sr;
        self.notes.entry((tex_id, midi)).or_insert_with(|| {
            let f0 = midi_hz(midi);
            let n = (NOTE_SEC * sr) as usize;
            let norm: f64 = tex.harmonics.iter().sum::<f64>().max(1e-9);
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let env = (t / 0.004).min(1.0) * (-t / tex.decay_sec).exp();
                    let mut x = 0.0;
                    for (h, &a) in tex.harmonics.iter().enumerate() {
                        let f = f0 * (h + 1) as f64;
                        if a > 0.0 && f < 0.45 * sr {
                            x += a * (2.0 * PI * f * t).sin();
                        }
                    }
                    (env * x / norm) as f32
                })
                .collect()
        })
    }

    fn drum(&mut self, tex_id: usize, tex: &Texture, kind: u8) -> &[f32] {
        let sr = self.sr;
        self.drums.entry((tex_id, kind)).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(tex.noise_seed ^ kind as u64);
            let n = (0.3 * sr) as usize;
            let mut prev = 0.0;
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let noise: f64 = rng.gen_range(-1.0..1.0);
                    let x = match kind {
                        // kick: falling sine
                        0 => {
                            let phase = 2.0 * PI * (45.0 * t + 40.0 * (1.0 - (-t / 0.03).exp()) * 0.03);
                            phase.sin() * (-t / 0.18).exp()
                        }
                        // snare: tone plus noise
                        1 => (0.4 * (2.0 * PI * 185.0 * t).sin() + 0.8 * noise) * (-t / 0.09).exp(),
                        // hat: differentiated noise
                        _ => {
                            let d = noise - prev;
                            prev = noise;
                            0.5 * d * (-t / 0.025).exp()
                        }
                    };
                    x as f32
                })
                .collect()
        })
    }
}

fn mix(out: &mut [f32], at: usize, src: &[f32], gain: f32) {
    if at >= out.len() {
        return;
    }
    let n = src.len().min(out.len() - at);
    for (o, s) in out[at..at + n].iter_mut().zip(src) {
        *o += gain * s;
    }
}

/// One rendered track with its exact structure.
#[derive(Debug, Clone)]
pub struct SynthTrack {
    pub id: String,
    pub audio: AudioBuffer,
    pub annotations: AnnotationSet,
    pub beats: BeatGrid,
    pub tempo_bpm: f64,
    /// Texture index of each section.
    pub section_textures: Vec<usize>,
}

/// Texture pool shared by every track of a corpus.
pub fn texture_pool(cfg: &SynthConfig) -> Vec<Texture> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e47_u64);
    (0..cfg.textures).map(|_| Texture::random(&mut rng)).collect()
}

/// Sections as (texture, bars), chosen so adjacent sections differ.
fn plan_sections(cfg: &SynthConfig, n_textures: usize, bars_total: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let max_fit = (bars_total / cfg.min_section_bars).max(1);
    let n = rng.gen_range(cfg.min_sections..=cfg.max_sections).min(max_fit);
    let mut bars = vec![cfg.min_section_bars; n];
    for _ in 0..bars_total.saturating_sub(n * cfg.min_section_bars) {
        bars[rng.gen_range(0..n)] += 1;
    }
    let mut order: Vec<usize> = (0..n_textures).collect();
    order.shuffle(rng);
    let mut textures = Vec::with_capacity(n);
    for k in 0..n {
        let t = if k < n_textures {
            order[k]
        } else {
            loop {
                let t = rng.gen_range(0..n_textures);
                if textures.last() != Some(&t) {
                    break t;
                }
            }
        };
        textures.push(t);
    }
    textures.into_iter().zip(bars).collect()
}

pub fn synth_track(cfg: &SynthConfig, pool: &[Texture], index: usize) -> Result<SynthTrack, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64 + 1));
    let tempo = rng.gen_range(cfg.tempo_bpm.0..=cfg.tempo_bpm.1);
    let beat = 60.0 / tempo;
    let bar = beat * BEATS_PER_BAR as f64;
    let bars_total = ((cfg.target_duration_sec / bar).round() as usize).max(cfg.min_section_bars);
    let sections = plan_sections(cfg, pool.len(), bars_total, &mut rng);

    let sr = cfg.sample_rate as f64;
    let total_bars: usize = sections.iter().map(|s| s.1).sum();
    let duration = total_bars as f64 * bar;
    let mut out = vec![0.0f32; (duration * sr).round() as usize];
    let mut voices = Voices::new(cfg.sample_rate);
    let step = beat / STEPS_PER_BEAT as f64;

    let mut intervals = Vec::with_capacity(sections.len());
    let mut bar_index = 0;
    for &(tex_id, n_bars) in &sections {
        let tex = &pool[tex_id];
        let start = bar_index as f64 * bar;
        for b in 0..n_bars {
            let chord = &tex.chords[b % tex.chords.len()];
            let bar_start = (bar_index + b) as f64 * bar;
            for s in 0..STEPS_PER_BAR {
                let at = ((bar_start + s as f64 * step) * sr).round() as usize;
                if tex.rhythm[s] {
                    for &m in chord {
                        let w = voices.note(tex_id, tex, m).to_vec();
                        mix(&mut out, at, &w, 0.22);
                    }
                }
                if tex.bass && s % (2 * STEPS_PER_BEAT) == 0 {
                    let root = chord[0].saturating_sub(24).max(29);
                    let w = voices.note(tex_id, tex, root).to_vec();
                    mix(&mut out, at, &w, 0.3);
                }
                for (kind, pat) in [(0u8, &tex.kick), (1, &tex.snare), (2, &tex.hat)] {
                    if pat[s] {
                        let w = voices.drum(tex_id, tex, kind).to_vec();
                        mix(&mut out, at, &w, tex.drum_level as f32);
                    }
                }
            }
        }
        bar_index += n_bars;
        intervals.push(Interval {
            start,
            end: bar_index as f64 * bar,
            label: format!("T{tex_id}"),
        });
    }
    if let Some(last) = intervals.last_mut() {
        last.end = out.len() as f64 / sr;
    }
    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    let audio = AudioBuffer::new(out, cfg.sample_rate);
    let n_beats = total_bars * BEATS_PER_BAR;
    let beats = BeatGrid::new((0..n_beats).map(|k| k as f64 * beat).collect())?;
    Ok(SynthTrack {
        id: format!("track{index:03}"),
        audio,
        annotations: AnnotationSet::from_intervals(intervals)?,
        beats,
        tempo_bpm: tempo,
        section_textures: sections.iter().map(|s| s.0).collect(),
    })
}

/// Paths written for one track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub wav: PathBuf,
    pub annotations: PathBuf,
    pub beats: PathBuf,
}

/// Writes `<id>.wav`, `<id>.tsv` and `<id>.beats` for every track under `out_dir`.
pub fn write_corpus(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Vec<SynthFiles>, SynthError> {
    cfg.validate()?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let pool = texture_pool(cfg);
    (0..cfg.n_tracks)
        .map(|i| {
            let t = synth_track(cfg, &pool, i)?;
            let files = SynthFiles {
                wav: dir.join(format!("{}.wav", t.id)),
                annotations: dir.join(format!("{}.tsv", t.id)),
                beats: dir.join(format!("{}.beats", t.id)),
            };
            audio::write_wav_pcm16(&files.wav, &t.audio)?;
            fs::write(&files.annotations, t.annotations.to_tsv())?;
            t.beats.write(&files.beats)?;
            log::info!("{}: {:.1} s, {} sections", t.id, t.audio.duration_sec(), t.section_textures.len());
            Ok(files)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> SynthConfig {
        SynthConfig {
            n_tracks: 2,
            target_duration_sec: 40.0,
            min_section_bars: 2,
            ..Default::default()
        }
    }

    #[test]
    fn track_structure() {
        let cfg = short();
        let pool = texture_pool(&cfg);
        let t = synth_track(&cfg, &pool, 0).unwrap();
        let n = t.section_textures.len();
        assert!((4..=8).contains(&n));
        assert!(t.section_textures.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(t.annotations.intervals.len(), n);
        assert!((t.annotations.duration_sec - t.audio.duration_sec()).abs() < 1e-9);
        assert!(t.audio.samples.iter().all(|v| v.abs() <= 0.9 + 1e-6));
        // every interior boundary is a beat time
        for b in &t.annotations.boundaries_sec[1..t.annotations.boundaries_sec.len() - 1] {
            let j = t.beats.nearest(*b).unwrap();
            assert!((t.beats.times()[j] - b).abs() < 1e-9);
        }
    }

    #[test]
    fn seeded_tracks_are_reproducible() {
        let cfg = short();
        let pool = texture_pool(&cfg);
        let a = synth_track(&cfg, &pool, 1).unwrap();
        let b = synth_track(&cfg, &texture_pool(&cfg), 1).unwrap();
        assert_eq!(a.audio, b.audio);
        let c = synth_track(&SynthConfig { seed: 5, ..cfg }, &pool, 1).unwrap();
        assert_ne!(a.audio, c.audio);
    }

    #[test]
    fn full_length_track_is_about_three_minutes() {
        let cfg = SynthConfig::default();
        let t = synth_track(&cfg, &texture_pool(&cfg), 3).unwrap();
        assert!((t.audio.duration_sec() - 180.0).abs() < 5.0);
        assert_eq!(t.audio.sample_rate, 22050);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SynthConfig { textures: 1, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { min_sections: 9, ..Default::default() }.validate().is_err());
    }
}
