//! Subcommands of the `segbed` binary, callable as library functions.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use segbed::config::PipelineConfig;

pub mod eval;
pub mod features;
pub mod fpfn;
pub mod segment;
pub mod synth;
pub mod train;

#[derive(Debug, Parser)]
#[command(name = "segbed", version, about = "Music structure segmentation with triplet-trained embeddings")]
pub struct Cli {
    /// Worker threads for per-track work (default: all cores).
    #[arg(long, global = true, env = "SEGBED_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Beat-synchronous log-CQT feature stores from a directory of WAV files.
    Features(features::FeaturesArgs),
    /// Train the embedding network on feature stores.
    Train(train::TrainArgs),
    /// Detect boundaries for every feature store.
    Segment(segment::SegmentArgs),
    /// Score estimated boundaries against reference annotations.
    Eval(eval::EvalArgs),
    /// Compare closed-form triplet FP/FN rates with Monte Carlo estimates.
    Fpfn(fpfn::FpfnArgs),
    /// Generate a synthetic corpus with exact annotations.
    Synth(synth::SynthArgs),
    /// Print the default configuration.
    DumpConfig {
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        anyhow::ensure!(j > 0, "--jobs must be at least 1");
        pool = pool.num_threads(j);
    }
    let pool = pool.build().context("building thread pool")?;
    pool.install(|| match cli.command {
        Command::Features(a) => features::cmd_features(&a).map(|s| s.report()),
        Command::Train(a) => train::cmd_train(&a).map(|_| ()),
        Command::Segment(a) => segment::cmd_segment(&a).map(|_| ()),
        Command::Eval(a) => eval::cmd_eval(&a).map(|r| println!("{}", r.summary())),
        Command::Fpfn(a) => fpfn::cmd_fpfn(&a).map(|_| ()),
        Command::Synth(a) => synth::cmd_synth(&a).map(|_| ()),
        Command::DumpConfig { out } => {
            let text = PipelineConfig::default().dump();
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    })
}

/// The configuration at `path`, or the defaults.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

/// Files in `dir` with the given extension, sorted by name.
pub(crate) fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
