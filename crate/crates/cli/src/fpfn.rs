use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segbed::sampling::{
    fn_formula_for_timeline, fp_formula_for_timeline, monte_carlo_rates_within, synth_timeline, LabelScheme,
    SamplingParams, SegmentTimeline,
};

use crate::load_config;

pub const CSV_HEADER: &str = "delta_p,delta_n_min,delta_n_max,fp_formula,fp_empirical,fn_formula,fn_empirical,flags";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Cycle,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct FpfnArgs {
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Positive radii to sweep (default: the config value).
    #[arg(long, value_delimiter = ',')]
    pub delta_p: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub delta_n_min: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub delta_n_max: Vec<usize>,
    /// Triplets per grid point, split evenly over the timelines.
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random timelines.
    #[arg(long, default_value_t = 10)]
    pub timelines: usize,
    /// Segments per timeline.
    #[arg(long, default_value_t = 8)]
    pub segments: usize,
    /// Segment length in beats, `N` or `LO-HI`.
    #[arg(long, default_value = "64")]
    pub segment_len: String,
    #[arg(long, default_value_t = 4)]
    pub labels: usize,
    #[arg(long, value_enum, default_value_t = Scheme::Cycle)]
    pub label_scheme: Scheme,
    /// Draw anchors only from `[m, L-1-m]`.
    #[arg(long, default_value_t = 0)]
    pub edge_margin: usize,
    /// Restrict positives to the side sharing the anchor's segment (side oracle).
    #[arg(long)]
    pub biased: bool,
    /// Clamp formula values to [0, 1] (they are reported verbatim by default).
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpfnRow {
    pub params: SamplingParams,
    pub fp_formula: f64,
    pub fp_empirical: f64,
    pub fn_formula: f64,
    pub fn_empirical: f64,
}

impl FpfnRow {
    /// Formula values outside [0, 1], e.g. `fp_formula>1`.
    pub fn flags(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if self.fp_formula > 1.0 {
            f.push("fp_formula>1");
        }
        if self.fp_formula < 0.0 {
            f.push("fp_formula<0");
        }
        if self.fn_formula > 1.0 {
            f.push("fn_formula>1");
        }
        if self.fn_formula < 0.0 {
            f.push("fn_formula<0");
        }
        f
    }
}

fn parse_len(s: &str) -> Result<(usize, usize)> {
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (a.trim().parse()?, b.trim().parse()?),
        None => {
            let v = s.trim().parse()?;
            (v, v)
        }
    };
    anyhow::ensure!(lo > 0 && lo <= hi, "segment length range {s} is empty");
    Ok((lo, hi))
}

pub fn to_csv(rows: &[FpfnRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.params.delta_p,
            r.params.delta_n_min,
            r.params.delta_n_max,
            r.fp_formula,
            r.fp_empirical,
            r.fn_formula,
            r.fn_empirical,
            r.flags().join(";")
        );
    }
    s
}

fn or_default(v: &[usize], d: usize) -> Vec<usize> {
    if v.is_empty() {
        vec![d]
    } else {
        v.to_vec()
    }
}

pub fn cmd_fpfn(args: &FpfnArgs) -> Result<Vec<FpfnRow>> {
    let cfg = load_config(args.config.as_deref())?;
    anyhow::ensure!(args.timelines > 0 && args.trials > 0, "need at least one timeline and one trial");
    let lengths = parse_len(&args.segment_len)?;
    let scheme = match args.label_scheme {
        Scheme::Cycle => LabelScheme::Cycle,
        Scheme::Random => LabelScheme::Random,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let timelines: Vec<SegmentTimeline> = (0..args.timelines)
        .map(|_| synth_timeline(args.segments, lengths, args.labels, scheme, &mut rng))
        .collect::<Result<_, _>>()?;
    let per_timeline = (args.trials / args.timelines).max(1);

    let mut rows = Vec::new();
    let mut grid_index = 0u64;
    for &dp in &or_default(&args.delta_p, cfg.sampling.delta_p) {
        for &dn_min in &or_default(&args.delta_n_min, cfg.sampling.delta_n_min) {
            for &dn_max in &or_default(&args.delta_n_max, cfg.sampling.delta_n_max) {
                grid_index += 1;
                let params = SamplingParams {
                    delta_p: dp,
                    delta_n_min: dn_min,
                    delta_n_max: dn_max,
                };
                if let Err(e) = params.validate() {
                    log::warn!("skipping δp={dp} δn=[{dn_min},{dn_max}]: {e}");
                    continue;
                }
                // one stream per grid point, so rows do not depend on grid order
                let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ grid_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let n = timelines.len() as f64;
                let (mut fp_f, mut fp_e, mut fn_f, mut fn_e) = (0.0, 0.0, 0.0, 0.0);
                for t in &timelines {
                    let last = t.len() - 1;
                    anyhow::ensure!(2 * args.edge_margin <= last, "edge margin leaves no anchors");
                    let mc = monte_carlo_rates_within(
                        t,
                        &params,
                        args.biased,
                        per_timeline,
                        args.edge_margin..=last - args.edge_margin,
                        &mut rng,
                    )?;
                    fp_e += mc.fp_rate / n;
                    fn_e += mc.fn_rate / n;
                    fp_f += fp_formula_for_timeline(t, dp, args.clamp) / n;
                    fn_f += fn_formula_for_timeline(t, &params, args.clamp) / n;
                }
                let row = FpfnRow {
                    params,
                    fp_formula: fp_f,
                    fp_empirical: fp_e,
                    fn_formula: fn_f,
                    fn_empirical: fn_e,
                };
                for flag in row.flags() {
                    log::warn!(
                        "δp={dp} δn=[{dn_min},{dn_max}]: {flag} (formula {:.4} / {:.4}, Monte Carlo {:.4} / {:.4})",
                        row.fp_formula,
                        row.fn_formula,
                        row.fp_empirical,
                        row.fn_empirical
                    );
                }
                rows.push(row);
            }
        }
    }
    let csv = to_csv(&rows);
    match &args.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(rows)
}
