use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use segbed::evaluation::{evaluate_corpus, parse_annotations, CorpusReport, TrackFailure, TrackPair};
use segbed::segmentation::read_boundaries_csv;

use crate::{load_config, stem};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Estimated boundaries: `<track>.csv` from `segment`, or `<track>.tsv` annotations.
    pub est_dir: PathBuf,
    /// Reference annotations, `<track>.tsv`.
    pub ref_dir: PathBuf,
    /// Metrics JSON to write.
    pub out_json: PathBuf,
    /// Hit tolerance in seconds (default from the config, 3.0).
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn estimates(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "tsv")))
        .collect();
    out.sort();
    Ok(out)
}

fn pair(est: &Path, ref_dir: &Path) -> Result<TrackPair> {
    let id = stem(est);
    let reference = parse_annotations(ref_dir.join(format!("{id}.tsv")))
        .with_context(|| format!("reference for {id}"))?;
    let estimated = if est.extension().is_some_and(|e| e == "tsv") {
        parse_annotations(est)?.boundaries_sec
    } else {
        read_boundaries_csv(est)?
    };
    Ok(TrackPair {
        id,
        estimated,
        reference: reference.boundaries_sec,
        duration_sec: reference.duration_sec,
    })
}

/// Scores every estimate that has a reference; tracks that fail are listed in the report.
pub fn cmd_eval(args: &EvalArgs) -> Result<CorpusReport> {
    let cfg = load_config(args.config.as_deref())?;
    let window = args.window.unwrap_or(cfg.eval_window_sec);
    anyhow::ensure!(window > 0.0, "window must be positive");
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for est in estimates(&args.est_dir)? {
        match pair(&est, &args.ref_dir) {
            Ok(p) => pairs.push(p),
            Err(e) => {
                log::warn!("{}: {e:#}", stem(&est));
                errors.push(TrackFailure {
                    id: stem(&est),
                    error: format!("{e:#}"),
                });
            }
        }
    }
    let mut report = evaluate_corpus(&pairs, window).map_err(|e| {
        anyhow!("no track could be evaluated ({e}); {} failures", errors.len())
    })?;
    report.errors = errors;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&args.out_json, json).with_context(|| format!("writing {}", args.out_json.display()))?;
    Ok(report)
}
