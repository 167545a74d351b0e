use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use segbed::embedding::{save_model, train, CsvTrainLogs, SamplerKind, TrainOutcome};
use segbed::features::dataset_entries;
use segbed::FeatureStore;

use crate::load_config;

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory of feature stores.
    pub store_dir: PathBuf,
    /// Checkpoint to write.
    pub out_model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sampler: Option<SamplerKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batches_per_epoch: Option<usize>,
    /// Per-epoch loss CSV (default: `<out_model>.loss.csv`).
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    /// Record every sampled triplet to this CSV.
    #[arg(long)]
    pub triplet_log: Option<PathBuf>,
}

impl TrainArgs {
    pub fn loss_log_path(&self) -> PathBuf {
        self.loss_log
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", self.out_model.display())))
    }
}

/// Loads every readable store under `dir`, logging the ones that fail.
pub fn load_stores(dir: &std::path::Path) -> Result<Vec<FeatureStore>> {
    let entries = dataset_entries(dir).with_context(|| format!("reading stores in {}", dir.display()))?;
    let mut stores = Vec::with_capacity(entries.len());
    for e in &entries {
        match FeatureStore::load(e) {
            Ok(s) => stores.push(s),
            Err(err) => log::warn!("skipping store {}: {err}", e.display()),
        }
    }
    if stores.is_empty() {
        bail!("no usable feature stores in {}", dir.display());
    }
    Ok(stores)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome<f32>> {
    let cfg = load_config(args.config.as_deref())?;
    let mut tc = cfg.train.clone();
    if let Some(s) = args.sampler {
        tc.sampler = s;
    }
    if let Some(s) = args.seed {
        tc.seed = s;
    }
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    if let Some(b) = args.batches_per_epoch {
        tc.batches_per_epoch = b;
    }
    let stores = load_stores(&args.store_dir)?;
    log::info!(
        "training on {} tracks: {} epochs x {} batches of {} triplets, {} sampler, seed {}",
        stores.len(),
        tc.epochs,
        tc.batches_per_epoch,
        tc.batch_size(),
        tc.sampler.name(),
        tc.seed
    );
    let loss_path = args.loss_log_path();
    let loss = BufWriter::new(File::create(&loss_path).with_context(|| format!("creating {}", loss_path.display()))?);
    let triplets = match &args.triplet_log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut logs = CsvTrainLogs::new(loss, triplets, tc.sampler)?;
    let outcome = train::<f32>(&stores, cfg.arch.clone(), &tc, &mut logs)?;
    let (mut loss, triplets) = logs.into_inner();
    std::io::Write::flush(&mut loss)?;
    if let Some(mut t) = triplets {
        std::io::Write::flush(&mut t)?;
    }
    save_model(&outcome.model, &args.out_model).with_context(|| format!("writing {}", args.out_model.display()))?;
    log::info!("wrote {}", args.out_model.display());
    Ok(outcome)
}
