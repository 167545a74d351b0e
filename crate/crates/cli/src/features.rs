use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use segbed::audio::load_audio;
use segbed::config::{PipelineConfig, Synchronization};
use segbed::dsp::{track_beats, BeatGrid};
use segbed::FeatureStore;

use crate::{files_with_extension, load_config, stem};

#[derive(Debug, Clone, Args)]
pub struct FeaturesArgs {
    /// Directory of WAV files.
    pub audio_dir: PathBuf,
    /// One store directory per track is written here.
    pub out_dir: PathBuf,
    /// Read `<track>.beats` from this directory instead of running the beat tracker.
    #[arg(long)]
    pub beats_dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct FeaturesSummary {
    pub written: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl FeaturesSummary {
    pub fn report(&self) {
        println!("{} stores written, {} tracks failed", self.written.len(), self.failed.len());
        for (id, e) in &self.failed {
            println!("  {id}: {e}");
        }
    }
}

fn one_track(wav: &Path, args: &FeaturesArgs, cfg: &PipelineConfig) -> Result<()> {
    let id = stem(wav);
    let audio = load_audio(wav, cfg.sample_rate)?;
    let store = match cfg.synchronization {
        Synchronization::Beat => {
            let beats = match &args.beats_dir {
                Some(dir) => {
                    let p = dir.join(format!("{id}.beats"));
                    BeatGrid::read(&p).with_context(|| format!("reading {}", p.display()))?
                }
                None => track_beats(&audio),
            };
            FeatureStore::extract(&id, &audio, &beats, &cfg.cqt, cfg.patch)?
        }
        Synchronization::Fixed => {
            FeatureStore::extract_fixed_hop(&id, &audio, &cfg.cqt, cfg.patch, cfg.fixed_hop_sec, cfg.fixed_step_sec)?
        }
    };
    store.save_to_dataset(&args.out_dir)?;
    log::info!("{id}: {} beats", store.len());
    Ok(())
}

/// Extracts every WAV in `audio_dir`; tracks that fail are logged and skipped.
pub fn cmd_features(args: &FeaturesArgs) -> Result<FeaturesSummary> {
    let cfg = load_config(args.config.as_deref())?;
    let wavs = files_with_extension(&args.audio_dir, "wav")?;
    if wavs.is_empty() {
        bail!("no WAV files in {}", args.audio_dir.display());
    }
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let results: Vec<(String, Result<()>)> = wavs
        .par_iter()
        .map(|w| (stem(w), one_track(w, args, &cfg)))
        .collect();
    let mut summary = FeaturesSummary::default();
    for (id, r) in results {
        match r {
            Ok(()) => summary.written.push(id),
            Err(e) => {
                log::warn!("skipping {id}: {e:#}");
                summary.failed.push((id, format!("{e:#}")));
            }
        }
    }
    if !summary.failed.is_empty() {
        log::warn!("{} of {} tracks failed", summary.failed.len(), wavs.len());
    }
    Ok(summary)
}
