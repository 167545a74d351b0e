use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use segbed::embedding::{embed_track, load_model, Model};
use segbed::segmentation::{boundaries_to_times, detect, write_boundaries_csv, write_novelty_csv, SegmentationParams};
use segbed::FeatureStore;

use crate::load_config;
use crate::train::load_stores;

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Directory of feature stores.
    pub store_dir: PathBuf,
    /// `<track>.csv` boundary files are written here.
    pub out_dir: PathBuf,
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    /// Use time-averaged raw patches instead of embeddings.
    #[arg(long, conflicts_with = "model")]
    pub baseline: bool,
    /// Also write the filtered SSM and the novelty curve under `<out_dir>/dump/`.
    #[arg(long)]
    pub dump: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct SegmentSummary {
    /// Track id and boundary times.
    pub tracks: Vec<(String, Vec<f64>)>,
    pub failed: Vec<(String, String)>,
}

fn one_track(
    store: &FeatureStore,
    model: Option<&Model<f32>>,
    params: &SegmentationParams,
    out_dir: &Path,
    dump: bool,
) -> Result<Vec<f64>> {
    let features = match model {
        Some(m) => embed_track(m, store)?.vectors,
        None => store.mean_pooled(),
    };
    let det = detect::<f64>(features.mapv(f64::from).view(), params)?;
    let times = boundaries_to_times(&det.boundaries, store.beat_grid())?;
    let id = store.track_id();
    write_boundaries_csv(out_dir.join(format!("{id}.csv")), &det.boundaries, &times)?;
    if dump {
        let d = out_dir.join("dump");
        std::fs::create_dir_all(&d)?;
        det.filtered.export(d.join(format!("{id}.ssm.f32")))?;
        write_novelty_csv(d.join(format!("{id}.novelty.csv")), &det.novelty, store.beat_grid().times())?;
    }
    log::info!("{id}: {} boundaries", times.len());
    Ok(times)
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<SegmentSummary> {
    let cfg = load_config(args.config.as_deref())?;
    let model = match &args.model {
        Some(p) if !args.baseline => {
            Some(load_model::<f32>(p).with_context(|| format!("loading model {}", p.display()))?)
        }
        _ => None,
    };
    let stores = load_stores(&args.store_dir)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let results: Vec<_> = stores
        .par_iter()
        .map(|s| {
            (
                s.track_id().to_string(),
                one_track(s, model.as_ref(), &cfg.segment, &args.out_dir, args.dump),
            )
        })
        .collect();
    let mut summary = SegmentSummary::default();
    for (id, r) in results {
        match r {
            Ok(t) => summary.tracks.push((id, t)),
            Err(e) => {
                log::warn!("skipping {id}: {e:#}");
                summary.failed.push((id, format!("{e:#}")));
            }
        }
    }
    anyhow::ensure!(!summary.tracks.is_empty(), "no track could be segmented");
    Ok(summary)
}
