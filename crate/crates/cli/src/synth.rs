use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use segbed::synth::{write_corpus, SynthConfig, SynthFiles};

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    #[arg(default_value_t = 20)]
    pub n_tracks: usize,
    /// Size of the shared texture pool.
    #[arg(long, default_value_t = 16)]
    pub textures: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Approximate track length in seconds.
    #[arg(long, default_value_t = 180.0)]
    pub duration: f64,
}

/// Writes `<id>.wav`, `<id>.tsv` and `<id>.beats` per track.
pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<SynthFiles>> {
    let cfg = SynthConfig {
        n_tracks: args.n_tracks,
        textures: args.textures,
        seed: args.seed,
        target_duration_sec: args.duration,
        ..Default::default()
    };
    let files = write_corpus(&args.out_dir, &cfg)?;
    println!("{} tracks written to {}", files.len(), args.out_dir.display());
    Ok(files)
}
