use std::io::{self, Write};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::triplet_term;
use super::model::{Model, Params};
use super::optim::{AdamConfig, AdamState};
use super::{ArchConfig, EmbeddingError};
use crate::features::FeatureStore;
use crate::sampling::{self, BiasProbe, SamplingParams, TripletIndices};
use crate::Scalar;

/// Triplets per parallel work unit. Fixed so results do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Unbiased,
    Biased,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Unbiased => "unbiased",
            Self::Biased => "biased",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unbiased" => Ok(Self::Unbiased),
            "biased" => Ok(Self::Biased),
            other => Err(format!("unknown sampler '{other}' (expected unbiased or biased)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub tracks_per_batch: usize,
    pub triplets_per_track: usize,
    pub optimizer: AdamConfig,
    pub sampling: SamplingParams,
    pub sampler: SamplerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.1,
            epochs: 240,
            batches_per_epoch: 256,
            tracks_per_batch: 6,
            triplets_per_track: 16,
            optimizer: AdamConfig::default(),
            sampling: SamplingParams::default(),
            sampler: SamplerKind::Unbiased,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Triplets per mini-batch (C).
    pub fn batch_size(&self) -> usize {
        self.tracks_per_batch * self.triplets_per_track
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if !(self.margin > 0.0) {
            return Err(EmbeddingError::InvalidConfig(format!("margin {} must be positive", self.margin)));
        }
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size() == 0 {
            return Err(EmbeddingError::InvalidConfig("epochs, batches and batch size must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.sampling.validate()?;
        Ok(())
    }
}

/// C (anchor, positive, negative) patch triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch<T> {
    pub anchors: Vec<Array2<T>>,
    pub positives: Vec<Array2<T>>,
    pub negatives: Vec<Array2<T>>,
}

impl<T: Scalar> TripletBatch<T> {
    pub fn new(anchors: Vec<Array2<T>>, positives: Vec<Array2<T>>, negatives: Vec<Array2<T>>) -> Result<Self, EmbeddingError> {
        if anchors.len() != positives.len() || anchors.len() != negatives.len() {
            return Err(EmbeddingError::InvalidConfig(format!(
                "batch has {} anchors, {} positives, {} negatives",
                anchors.len(),
                positives.len(),
                negatives.len()
            )));
        }
        Ok(Self {
            anchors,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Patches for the given triplets of one store.
    pub fn push_from_store(&mut self, store: &FeatureStore, t: &TripletIndices) -> Result<(), EmbeddingError> {
        let fetch = |i: usize| -> Result<Array2<T>, EmbeddingError> {
            Ok(store.patch(i)?.values.mapv(|v| T::lit(v as f64)))
        };
        self.anchors.push(fetch(t.anchor)?);
        self.positives.push(fetch(t.positive)?);
        self.negatives.push(fetch(t.negative)?);
        Ok(())
    }
}

impl<T: Scalar> Default for TripletBatch<T> {
    fn default() -> Self {
        Self {
            anchors: Vec::new(),
            positives: Vec::new(),
            negatives: Vec::new(),
        }
    }
}

/// Summed triplet loss over the batch and its gradient with respect to every parameter.
pub fn batch_gradient<T: Scalar>(
    model: &Model<T>,
    batch: &TripletBatch<T>,
    margin: T,
) -> Result<(T, Params<T>), EmbeddingError> {
    let chunks: Vec<(T, Params<T>)> = (0..batch.len())
        .collect::<Vec<_>>()
        .par_chunks(GRAD_CHUNK)
        .map(|idx| -> Result<(T, Params<T>), EmbeddingError> {
            let mut grad = Params::zeros(model.arch())?;
            let mut loss = T::zero();
            for &c in idx {
                let (ea, ta) = model.forward_traced(batch.anchors[c].view())?;
                let (ep, tp) = model.forward_traced(batch.positives[c].view())?;
                let (en, tn) = model.forward_traced(batch.negatives[c].view())?;
                let term = triplet_term(ea.view(), ep.view(), en.view(), margin);
                if term <= T::zero() {
                    continue;
                }
                loss = loss + term;
                let two = T::lit(2.0);
                let ga = (&en - &ep) * two;
                let gp = (&ep - &ea) * two;
                let gn = (&ea - &en) * two;
                model.backward(&ta, ga.view(), &mut grad);
                model.backward(&tp, gp.view(), &mut grad);
                model.backward(&tn, gn.view(), &mut grad);
            }
            Ok((loss, grad))
        })
        .collect::<Result<_, _>>()?;
    let mut total = Params::zeros(model.arch())?;
    let mut loss = T::zero();
    for (l, g) in &chunks {
        loss = loss + *l;
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Summed loss of the batch without gradients.
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &TripletBatch<T>, margin: T) -> Result<T, EmbeddingError> {
    let terms: Vec<T> = (0..batch.len())
        .into_par_iter()
        .map(|c| -> Result<T, EmbeddingError> {
            let a = model.forward(batch.anchors[c].view())?;
            let p = model.forward(batch.positives[c].view())?;
            let n = model.forward(batch.negatives[c].view())?;
            Ok(triplet_term(a.view(), p.view(), n.view(), margin).max(T::zero()))
        })
        .collect::<Result<_, _>>()?;
    Ok(terms.into_iter().fold(T::zero(), |a, b| a + b))
}

/// One Adam update; returns the loss before the update.
pub fn grad_step<T: Scalar>(
    model: &mut Model<T>,
    batch: &TripletBatch<T>,
    margin: f64,
    optimizer: &AdamConfig,
    state: &mut AdamState<T>,
) -> Result<T, EmbeddingError> {
    let (loss, grad) = batch_gradient(model, batch, T::lit(margin))?;
    if !loss.is_finite() || !grad.all_finite() {
        return Err(EmbeddingError::NonFiniteLoss {
            step: state.steps() + 1,
            loss: loss.as_f64(),
        });
    }
    state.update(optimizer, &mut model.params, &grad);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletRecord<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub track_id: &'a str,
    pub triplet: TripletIndices,
}

/// Receives progress from [`train`]. Both hooks default to doing nothing.
pub trait TrainObserver {
    fn on_epoch(&mut self, _log: &EpochLog) -> io::Result<()> {
        Ok(())
    }

    fn on_triplet(&mut self, _record: &TripletRecord<'_>) -> io::Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Writes the loss CSV (`epoch,mean_loss,wall_sec`) and the triplet CSV.
pub struct CsvTrainLogs<L: Write, R: Write> {
    loss: L,
    triplets: Option<R>,
}

impl<L: Write, R: Write> CsvTrainLogs<L, R> {
    pub fn new(mut loss: L, triplets: Option<R>, sampler: SamplerKind) -> io::Result<Self> {
        writeln!(loss, "epoch,mean_loss,wall_sec")?;
        let triplets = match triplets {
            Some(mut w) => {
                writeln!(w, "# sampler={}", sampler.name())?;
                writeln!(w, "epoch,batch,track_id,anchor,positive,negative")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { loss, triplets })
    }

    pub fn into_inner(self) -> (L, Option<R>) {
        (self.loss, self.triplets)
    }
}

impl<L: Write, R: Write> TrainObserver for CsvTrainLogs<L, R> {
    fn on_epoch(&mut self, log: &EpochLog) -> io::Result<()> {
        writeln!(self.loss, "{},{},{:.3}", log.epoch, log.mean_loss, log.wall_sec)?;
        self.loss.flush()
    }

    fn on_triplet(&mut self, r: &TripletRecord<'_>) -> io::Result<()> {
        if let Some(w) = self.triplets.as_mut() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch, r.batch, r.track_id, r.triplet.anchor, r.triplet.positive, r.triplet.negative
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub epochs: Vec<EpochLog>,
}

/// Trains from scratch. Everything random derives from `cfg.seed`.
///
/// Each step draws `tracks_per_batch` distinct tracks (with replacement when
/// the dataset is smaller) and `triplets_per_track` triplets from each.
pub fn train<T: Scalar>(
    stores: &[FeatureStore],
    arch: ArchConfig,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>, EmbeddingError> {
    cfg.validate()?;
    if stores.is_empty() {
        return Err(EmbeddingError::EmptyDataset);
    }
    for s in stores {
        let c = s.config();
        if (c.frames(), c.bins) != arch.input {
            return Err(EmbeddingError::ShapeMismatch {
                expected: arch.input,
                actual: (c.frames(), c.bins),
            });
        }
    }
    if stores.len() < cfg.tracks_per_batch {
        log::warn!(
            "{} tracks for {} per batch; drawing tracks with replacement",
            stores.len(),
            cfg.tracks_per_batch
        );
    }
    let probes: Vec<Option<BiasProbe>> = stores
        .iter()
        .map(|s| (cfg.sampler == SamplerKind::Biased).then(|| BiasProbe::new(s)))
        .collect();

    let mut model = Model::<T>::init(arch, cfg.seed)?;
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1b_u64);
    let started = Instant::now();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for b in 0..cfg.batches_per_epoch {
            let tracks: Vec<usize> = if stores.len() >= cfg.tracks_per_batch {
                index::sample(&mut rng, stores.len(), cfg.tracks_per_batch).into_vec()
            } else {
                (0..cfg.tracks_per_batch).map(|_| rng.gen_range(0..stores.len())).collect()
            };
            let mut batch = TripletBatch::<T>::default();
            for &k in &tracks {
                let store = &stores[k];
                for _ in 0..cfg.triplets_per_track {
                    let t = match &probes[k] {
                        Some(p) => sampling::sample_triplet_biased(store, p, &cfg.sampling, &mut rng)?,
                        None => sampling::sample_triplet(store.len(), &cfg.sampling, &mut rng)?,
                    };
                    observer.on_triplet(&TripletRecord {
                        epoch,
                        batch: b,
                        track_id: store.track_id(),
                        triplet: t,
                    })?;
                    batch.push_from_store(store, &t)?;
                }
            }
            let loss = grad_step(&mut model, &batch, cfg.margin, &cfg.optimizer, &mut state)?;
            total += loss.as_f64();
        }
        let log = EpochLog {
            epoch,
            mean_loss: total / cfg.batches_per_epoch as f64,
            wall_sec: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: mean loss {:.5} ({:.1} s)", log.mean_loss, log.wall_sec);
        observer.on_epoch(&log)?;
        epochs.push(log);
    }
    Ok(TrainOutcome { model, epochs })
}

/// Per-beat embeddings of one track (L × D).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<T> {
    pub track_id: String,
    pub vectors: Array2<T>,
}

impl<T: Scalar> EmbeddingSequence<T> {
    pub fn new(track_id: impl Into<String>, vectors: Array2<T>) -> Self {
        Self {
            track_id: track_id.into(),
            vectors,
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }
}

/// Forward pass at every beat of `store`.
pub fn embed_track<T: Scalar>(model: &Model<T>, store: &FeatureStore) -> Result<EmbeddingSequence<T>, EmbeddingError> {
    let c = store.config();
    if (c.frames(), c.bins) != model.arch().input {
        return Err(EmbeddingError::ShapeMismatch {
            expected: model.arch().input,
            actual: (c.frames(), c.bins),
        });
    }
    let rows: Vec<_> = (0..store.len())
        .into_par_iter()
        .map(|i| -> Result<_, EmbeddingError> {
            let x = store.patch(i)?.values.mapv(|v| T::lit(v as f64));
            model.forward(x.view())
        })
        .collect::<Result<_, _>>()?;
    let mut vectors = Array2::zeros((rows.len(), model.dim()));
    for (mut dst, r) in vectors.outer_iter_mut().zip(rows) {
        dst.assign(&r);
    }
    Ok(EmbeddingSequence::new(store.track_id(), vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::BeatGrid;
    use crate::features::{FrameLayout, PatchConfig};
    use ndarray::Array2;
    use rand::Rng;

    fn random_patch(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, shape: (usize, usize)) -> TripletBatch<f64> {
        let mut b = TripletBatch::default();
        for _ in 0..n {
            b.anchors.push(random_patch(rng, shape));
            b.positives.push(random_patch(rng, shape));
            b.negatives.push(random_patch(rng, shape));
        }
        b
    }

    fn flat(p: &Params<f64>) -> Vec<f64> {
        p.tensors().into_iter().flatten().copied().collect()
    }

    #[test]
    fn backprop_matches_central_differences() {
        let arch = ArchConfig::tiny();
        for draw in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + draw);
            let mut model = Model::<f64>::init(arch.clone(), draw).unwrap();
            // nonzero biases keep every ReLU off its kink
            for l in model.params.conv.iter_mut().chain(model.params.dense.iter_mut()) {
                l.bias.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
            }
            let batch = random_batch(&mut rng, 3, arch.input);
            // large margin keeps every hinge active
            let margin = 50.0;
            let (_, grad) = batch_gradient(&model, &batch, margin).unwrap();
            let analytic = flat(&grad);
            let h = 1e-6;
            let mut numeric = Vec::with_capacity(analytic.len());
            let n_tensors = model.params.tensors().len();
            for t in 0..n_tensors {
                let len = model.params.tensors()[t].len();
                for i in 0..len {
                    let orig = model.params.tensors()[t][i];
                    model.params.tensors_mut()[t][i] = orig + h;
                    let up = batch_loss(&model, &batch, margin).unwrap();
                    model.params.tensors_mut()[t][i] = orig - h;
                    let down = batch_loss(&model, &batch, margin).unwrap();
                    model.params.tensors_mut()[t][i] = orig;
                    numeric.push((up - down) / (2.0 * h));
                }
            }
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(scale > 0.0);
            assert!(diff / scale < 1e-4, "draw {draw}: relative error {}", diff / scale);
        }
    }

    #[test]
    fn inactive_hinge_leaves_weights_unchanged() {
        let arch = ArchConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Model::<f64>::init(arch.clone(), 3).unwrap();
        let mut batch = random_batch(&mut rng, 4, arch.input);
        batch.positives = batch.anchors.clone();
        let before = model.params.clone();
        let margin = 1e-12;
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&model.params);
        let loss = grad_step(&mut model, &batch, margin, &cfg, &mut state).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(model.params, before);
    }

    #[test]
    fn overfits_a_fixed_batch() {
        let arch = ArchConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = Model::<f64>::init(arch.clone(), 9).unwrap();
        let batch = random_batch(&mut rng, 8, arch.input);
        let cfg = AdamConfig {
            learning_rate: 1e-2,
            ..Default::default()
        };
        let mut state = AdamState::new(&model.params);
        let margin = 0.5;
        let first = batch_loss(&model, &batch, margin).unwrap();
        for _ in 0..400 {
            grad_step(&mut model, &batch, margin, &cfg, &mut state).unwrap();
        }
        let last = batch_loss(&model, &batch, margin).unwrap();
        assert!(first > 1.0);
        assert!(last < 0.05 * first, "loss {first} -> {last}");
    }

    /// Two alternating textures so the side probe has something to find.
    fn block_store(id: &str, len: usize, seed: u64) -> FeatureStore {
        let cfg = PatchConfig {
            beats_per_patch: 2,
            windows_per_beat: 4,
            bins: 6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = Array2::from_shape_fn((len * 4, 6), |(r, k)| {
            let block = (r / 4) / 25;
            let base = if block % 2 == 0 { -1.0 } else if k % 2 == 0 { 1.0 } else { -2.0 };
            base + rng.gen_range(-0.1f32..0.1)
        });
        let grid = BeatGrid::uniform(0.5, (len - 1) as f64 * 0.5);
        FeatureStore::from_log_rows(id, grid, cfg, FrameLayout::BeatSynchronous, rows).unwrap()
    }

    fn small_config(sampler: SamplerKind, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batches_per_epoch: 2,
            tracks_per_batch: 2,
            triplets_per_track: 3,
            sampler,
            seed,
            ..Default::default()
        }
    }

    fn run(stores: &[FeatureStore], cfg: &TrainConfig) -> (TrainOutcome<f32>, String, String) {
        let mut logs = CsvTrainLogs::new(Vec::new(), Some(Vec::new()), cfg.sampler).unwrap();
        let out = train::<f32>(stores, ArchConfig::tiny(), cfg, &mut logs).unwrap();
        let (loss, trip) = logs.into_inner();
        (out, String::from_utf8(loss).unwrap(), String::from_utf8(trip.unwrap()).unwrap())
    }

    #[test]
    fn training_is_reproducible_per_seed() {
        let stores: Vec<_> = (0..3).map(|i| block_store(&format!("t{i}"), 150, i)).collect();
        let cfg = small_config(SamplerKind::Unbiased, 11);
        let (a, _, ta) = run(&stores, &cfg);
        let (b, _, tb) = run(&stores, &cfg);
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(ta, tb);
        let losses = |o: &TrainOutcome<f32>| o.epochs.iter().map(|e| e.mean_loss).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        let (c, _, tc) = run(&stores, &small_config(SamplerKind::Unbiased, 12));
        assert_ne!(a.model.params, c.model.params);
        assert_ne!(ta, tc);
    }

    #[test]
    fn logs_have_expected_layout() {
        let stores: Vec<_> = (0..2).map(|i| block_store(&format!("t{i}"), 150, i)).collect();
        let cfg = small_config(SamplerKind::Biased, 1);
        let (_, loss, trip) = run(&stores, &cfg);
        let loss: Vec<_> = loss.lines().collect();
        assert_eq!(loss[0], "epoch,mean_loss,wall_sec");
        assert_eq!(loss.len(), 1 + cfg.epochs);
        let trip: Vec<_> = trip.lines().collect();
        assert_eq!(trip[0], "# sampler=biased");
        assert_eq!(trip[1], "epoch,batch,track_id,anchor,positive,negative");
        assert_eq!(trip.len(), 2 + cfg.epochs * cfg.batches_per_epoch * cfg.batch_size());
    }

    #[test]
    fn biased_positives_stay_on_the_anchor_side() {
        let stores = vec![block_store("t0", 200, 4)];
        let cfg = TrainConfig {
            tracks_per_batch: 1,
            triplets_per_track: 40,
            ..small_config(SamplerKind::Biased, 5)
        };
        let (_, _, trip) = run(&stores, &cfg);
        let (_, _, unb) = run(&stores, &TrainConfig { sampler: SamplerKind::Unbiased, ..cfg.clone() });
        let crossings = |log: &str| {
            log.lines()
                .skip(2)
                .filter(|l| {
                    let f: Vec<usize> = l.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
                    f[0] / 25 != f[1] / 25
                })
                .count()
        };
        assert!(crossings(&trip) < crossings(&unb), "biased {} vs unbiased {}", crossings(&trip), crossings(&unb));
    }

    #[test]
    fn rejects_mismatched_input_shape() {
        let stores = vec![block_store("t0", 150, 0)];
        let r = train::<f32>(&stores, ArchConfig::standard(), &small_config(SamplerKind::Unbiased, 0), &mut ());
        assert!(matches!(r, Err(EmbeddingError::ShapeMismatch { .. })));
        assert!(matches!(
            train::<f32>(&[], ArchConfig::tiny(), &small_config(SamplerKind::Unbiased, 0), &mut ()),
            Err(EmbeddingError::EmptyDataset)
        ));
    }
}
