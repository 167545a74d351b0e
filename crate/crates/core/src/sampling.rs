//! Time-proximity triplet sampling and its false positive / false negative statistics.
//!
//! An anchor beat is drawn uniformly; the positive comes from within
//! `delta_p` beats of it and the negative from between `delta_n_min` and
//! `delta_n_max` beats away on either side. The biased sampler additionally
//! compares 2D-DFT features of short excerpts before and after the anchor and
//! draws the positive from the more similar side, the negative from the other.

use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, TwoDimDftFeature};
use crate::features::FeatureStore;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("no negative index available for {len} beats with delta_n_min = {delta_n_min}")]
    EmptyNegativeRegion { len: usize, delta_n_min: usize },
    #[error("invalid timeline: {0}")]
    InvalidTimeline(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub delta_p: usize,
    pub delta_n_min: usize,
    pub delta_n_max: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            delta_p: 16,
            delta_n_min: 1,
            delta_n_max: 96,
        }
    }
}

/// Inclusive beat range.
pub type BeatRange = (usize, usize);

impl SamplingParams {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.delta_p < 1 {
            return Err(SamplingError::InvalidParams("delta_p must be >= 1".into()));
        }
        if self.delta_n_min >= self.delta_n_max {
            return Err(SamplingError::InvalidParams(format!(
                "delta_n_min {} must be below delta_n_max {}",
                self.delta_n_min, self.delta_n_max
            )));
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<(), SamplingError> {
        self.validate()?;
        if len == 0 || len < 2 * self.delta_n_min + 1 {
            return Err(SamplingError::EmptyNegativeRegion {
                len,
                delta_n_min: self.delta_n_min,
            });
        }
        Ok(())
    }

    /// `{max(a - δp, 0) .. min(a + δp, L - 1)}`
    pub fn positive_range(&self, anchor: usize, len: usize) -> BeatRange {
        (anchor.saturating_sub(self.delta_p), (anchor + self.delta_p).min(len - 1))
    }

    /// The two clipped negative regions, before and after the anchor.
    pub fn negative_ranges(&self, anchor: usize, len: usize) -> [BeatRange; 2] {
        let last = len - 1;
        [
            (
                anchor.saturating_sub(self.delta_n_max),
                anchor.saturating_sub(self.delta_n_min),
            ),
            (
                (anchor + self.delta_n_min).min(last),
                (anchor + self.delta_n_max).min(last),
            ),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndices {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Before,
    After,
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, (lo, hi): BeatRange) -> usize {
    rng.gen_range(lo..=hi)
}

/// Uniform draw over the set union of two inclusive ranges (shared indices counted once).
fn uniform_in_union<R: Rng + ?Sized>(rng: &mut R, a: BeatRange, b: BeatRange) -> usize {
    let (first, second) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    if second.0 <= first.1 + 1 {
        return uniform_in(rng, (first.0, first.1.max(second.1)));
    }
    let n_first = first.1 - first.0 + 1;
    let n_second = second.1 - second.0 + 1;
    let k = rng.gen_range(0..n_first + n_second);
    if k < n_first {
        first.0 + k
    } else {
        second.0 + (k - n_first)
    }
}

fn restricted_positive(params: &SamplingParams, anchor: usize, len: usize, side: Side) -> BeatRange {
    let (lo, hi) = params.positive_range(anchor, len);
    match side {
        Side::Before => (lo, anchor),
        Side::After => (anchor, hi),
    }
}

/// The negative region on the opposite side of `positive_side`, keeping only indices strictly on that side.
fn restricted_negative(params: &SamplingParams, anchor: usize, len: usize, positive_side: Side) -> Option<BeatRange> {
    let [before, after] = params.negative_ranges(anchor, len);
    match positive_side {
        Side::Before => {
            let lo = after.0.max(anchor + 1);
            (lo <= after.1).then_some((lo, after.1))
        }
        Side::After => {
            let hi = before.1.min(anchor.checked_sub(1)?);
            (before.0 <= hi).then_some((before.0, hi))
        }
    }
}

fn draw_around<R: Rng + ?Sized>(
    anchor: usize,
    len: usize,
    params: &SamplingParams,
    side: Option<Side>,
    rng: &mut R,
) -> TripletIndices {
    let positive = match side {
        Some(s) => uniform_in(rng, restricted_positive(params, anchor, len, s)),
        None => uniform_in(rng, params.positive_range(anchor, len)),
    };
    let negative = match side.and_then(|s| restricted_negative(params, anchor, len, s)) {
        Some(range) => uniform_in(rng, range),
        None => {
            let [before, after] = params.negative_ranges(anchor, len);
            uniform_in_union(rng, before, after)
        }
    };
    TripletIndices {
        anchor,
        positive,
        negative,
    }
}

/// Unbiased triplet over a track of `len` beats.
pub fn sample_triplet<R: Rng + ?Sized>(
    len: usize,
    params: &SamplingParams,
    rng: &mut R,
) -> Result<TripletIndices, SamplingError> {
    sample_triplet_with(len, params, rng, |_| None)
}

/// Unbiased triplet with a fixed anchor.
pub fn sample_triplet_at<R: Rng + ?Sized>(
    anchor: usize,
    len: usize,
    params: &SamplingParams,
    rng: &mut R,
) -> Result<TripletIndices, SamplingError> {
    params.check_len(len)?;
    if anchor >= len {
        return Err(SamplingError::InvalidParams(format!("anchor {anchor} outside {len} beats")));
    }
    Ok(draw_around(anchor, len, params, None, rng))
}

/// Triplet whose positive/negative sides are chosen by `side_of(anchor)`;
/// `None` from the oracle means "no preference" and selects the unbiased regions.
pub fn sample_triplet_with<R, F>(
    len: usize,
    params: &SamplingParams,
    rng: &mut R,
    mut side_of: F,
) -> Result<TripletIndices, SamplingError>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> Option<Side>,
{
    params.check_len(len)?;
    let anchor = rng.gen_range(0..len);
    let side = side_of(anchor);
    Ok(draw_around(anchor, len, params, side, rng))
}

/// Offsets (in beats) of the probe excerpts on each side of the anchor.
pub const PROBE_OFFSETS: [usize; 2] = [4, 16];
/// Length of each probe excerpt in beats.
pub const PROBE_BEATS: usize = 8;

/// Chooses the side of an anchor whose 2D-DFT probes look most like the anchor's own excerpt.
pub struct BiasProbe {
    feature: TwoDimDftFeature,
}

impl BiasProbe {
    pub fn new(store: &FeatureStore) -> Self {
        let frames = PROBE_BEATS * store.rows_per_beat();
        Self {
            feature: TwoDimDftFeature::new(store.config().bins, frames),
        }
    }

    fn probe(&self, store: &FeatureStore, center: isize) -> Vec<f64> {
        // bins × frames
        let span = store.span(center, PROBE_BEATS);
        self.feature
            .compute(span.t())
            .expect("probe span matches planned shape")
    }

    /// `None` when the anchor is within 16 beats of either end of the track.
    pub fn side(&self, store: &FeatureStore, anchor: usize) -> Option<Side> {
        let reach = PROBE_OFFSETS[1];
        if anchor < reach || anchor + reach > store.len().checked_sub(1)? {
            return None;
        }
        let a = anchor as isize;
        let center = self.probe(store, a);
        let score = |sign: isize| -> f64 {
            PROBE_OFFSETS
                .iter()
                .map(|&o| dsp::euclidean(&center, &self.probe(store, a + sign * o as isize)))
                .sum()
        };
        let before = score(-1);
        let after = score(1);
        Some(if before < after { Side::Before } else { Side::After })
    }
}

/// Side of `anchor` deemed more likely to share its segment; ties go to [`Side::After`].
pub fn biased_side(store: &FeatureStore, anchor: usize) -> Option<Side> {
    BiasProbe::new(store).side(store, anchor)
}

/// Triplet using the 2D-DFT side comparison, falling back to unbiased regions near the track ends.
pub fn sample_triplet_biased<R: Rng + ?Sized>(
    store: &FeatureStore,
    probe: &BiasProbe,
    params: &SamplingParams,
    rng: &mut R,
) -> Result<TripletIndices, SamplingError> {
    sample_triplet_with(store.len(), params, rng, |a| probe.side(store, a))
}

/// Like [`sample_triplet_biased`], with a caller-supplied side for a fixed anchor.
pub fn sample_triplet_on_side<R: Rng + ?Sized>(
    anchor: usize,
    len: usize,
    params: &SamplingParams,
    side: Side,
    rng: &mut R,
) -> Result<TripletIndices, SamplingError> {
    params.check_len(len)?;
    if anchor >= len {
        return Err(SamplingError::InvalidParams(format!("anchor {anchor} outside {len} beats")));
    }
    Ok(draw_around(anchor, len, params, Some(side), rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Contiguous labelled segments covering beats `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTimeline {
    segments: Vec<Segment>,
}

impl SegmentTimeline {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SamplingError> {
        if segments.is_empty() {
            return Err(SamplingError::InvalidTimeline("no segments".into()));
        }
        let mut expected = 0;
        for (n, s) in segments.iter().enumerate() {
            if s.start != expected {
                return Err(SamplingError::InvalidTimeline(format!(
                    "segment {n} starts at {} but previous ended at {expected}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(SamplingError::InvalidTimeline(format!("segment {n} is empty")));
            }
            expected = s.end;
        }
        Ok(Self { segments })
    }

    /// Builds from consecutive lengths and labels.
    pub fn from_lengths(lengths: &[usize], labels: &[usize]) -> Result<Self, SamplingError> {
        if lengths.len() != labels.len() {
            return Err(SamplingError::InvalidTimeline("lengths and labels differ in count".into()));
        }
        let mut start = 0;
        let segments = lengths
            .iter()
            .zip(labels)
            .map(|(&l, &label)| {
                let s = Segment {
                    start,
                    end: start + l,
                    label,
                };
                start += l;
                s
            })
            .collect();
        Self::new(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Total beats L.
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the segment instance containing `beat`.
    pub fn segment_at(&self, beat: usize) -> usize {
        self.segments.partition_point(|s| s.end <= beat)
    }

    pub fn label_at(&self, beat: usize) -> usize {
        self.segments[self.segment_at(beat)].label
    }

    /// Σ_m l_{s,m}: total beats carrying `label`.
    pub fn class_total(&self, label: usize) -> usize {
        self.segments.iter().filter(|s| s.label == label).map(Segment::len).sum()
    }

    /// Smallest number of beats between two distinct instances of the same label.
    pub fn min_same_label_separation(&self) -> Option<usize> {
        let mut best = None;
        for (i, a) in self.segments.iter().enumerate() {
            for b in &self.segments[i + 1..] {
                if a.label == b.label {
                    let gap = b.start - a.end;
                    best = Some(best.map_or(gap, |g: usize| g.min(gap)));
                }
            }
        }
        best
    }

    /// Per-beat segment indices and labels.
    fn beat_tables(&self) -> (Vec<usize>, Vec<usize>) {
        let mut seg = Vec::with_capacity(self.len());
        let mut lab = Vec::with_capacity(self.len());
        for (n, s) in self.segments.iter().enumerate() {
            for _ in s.start..s.end {
                seg.push(n);
                lab.push(s.label);
            }
        }
        (seg, lab)
    }
}

/// Closed-form P(FP | l; δp), evaluated exactly as the three-branch expression,
/// optionally clamped to [0, 1].
pub fn fp_probability(segment_len: f64, delta_p: f64, clamp: bool) -> f64 {
    let (l, d) = (segment_len, delta_p);
    let p = if l <= d {
        (2.0 * d - l) / l
    } else if l < 2.0 * d {
        d * d / (2.0 * l * l) - 3.0 * d / (4.0 * l) + 0.5
    } else {
        d / (4.0 * l)
    };
    if clamp {
        p.clamp(0.0, 1.0)
    } else {
        p
    }
}

/// Closed-form false-negative probability for an anchor in segment `segment_index`:
/// `Σ_m l_{s,m} / L - (1 - P(FP | l_{s,n}; δ_{n,min}))`.
pub fn fn_probability(
    timeline: &SegmentTimeline,
    segment_index: usize,
    params: &SamplingParams,
    clamp: bool,
) -> f64 {
    let seg = timeline.segments[segment_index];
    let share = timeline.class_total(seg.label) as f64 / timeline.len() as f64;
    let p = share - (1.0 - fp_probability(seg.len() as f64, params.delta_n_min as f64, false));
    if clamp {
        p.clamp(0.0, 1.0)
    } else {
        p
    }
}

/// Closed-form FP rate averaged over a uniformly drawn anchor.
pub fn fp_formula_for_timeline(timeline: &SegmentTimeline, delta_p: usize, clamp: bool) -> f64 {
    let l_total = timeline.len() as f64;
    timeline
        .segments()
        .iter()
        .map(|s| s.len() as f64 / l_total * fp_probability(s.len() as f64, delta_p as f64, clamp))
        .sum()
}

/// Closed-form FN rate averaged over a uniformly drawn anchor.
pub fn fn_formula_for_timeline(timeline: &SegmentTimeline, params: &SamplingParams, clamp: bool) -> f64 {
    let l_total = timeline.len() as f64;
    (0..timeline.segments().len())
        .map(|n| timeline.segments()[n].len() as f64 / l_total * fn_probability(timeline, n, params, clamp))
        .sum()
}

/// Side whose ±4 / ±16 probe beats share the anchor's segment instance more often; ties go after.
pub fn membership_side(timeline: &SegmentTimeline, anchor: usize) -> Option<Side> {
    let reach = PROBE_OFFSETS[1];
    if anchor < reach || anchor + reach > timeline.len().checked_sub(1)? {
        return None;
    }
    let own = timeline.segment_at(anchor);
    let shared = |beats: [usize; 2]| beats.iter().filter(|&&b| timeline.segment_at(b) == own).count();
    let before = shared(PROBE_OFFSETS.map(|o| anchor - o));
    let after = shared(PROBE_OFFSETS.map(|o| anchor + o));
    Some(if before > after { Side::Before } else { Side::After })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloRates {
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub trials: usize,
}

/// Empirical FP / FN rates over `trials` triplets with uniformly drawn anchors.
pub fn monte_carlo_rates<R: Rng + ?Sized>(
    timeline: &SegmentTimeline,
    params: &SamplingParams,
    biased: bool,
    trials: usize,
    rng: &mut R,
) -> Result<MonteCarloRates, SamplingError> {
    let last = timeline.len().saturating_sub(1);
    monte_carlo_rates_within(timeline, params, biased, trials, 0..=last, rng)
}

/// As [`monte_carlo_rates`] with anchors drawn uniformly from `anchors` only.
pub fn monte_carlo_rates_within<R: Rng + ?Sized>(
    timeline: &SegmentTimeline,
    params: &SamplingParams,
    biased: bool,
    trials: usize,
    anchors: RangeInclusive<usize>,
    rng: &mut R,
) -> Result<MonteCarloRates, SamplingError> {
    if trials == 0 {
        return Err(SamplingError::InvalidParams("trials must be >= 1".into()));
    }
    let len = timeline.len();
    params.check_len(len)?;
    if anchors.is_empty() || *anchors.end() >= len {
        return Err(SamplingError::InvalidParams(format!("anchor range {anchors:?} outside {len} beats")));
    }
    let (seg, lab) = timeline.beat_tables();
    let (mut fp, mut fneg) = (0usize, 0usize);
    for _ in 0..trials {
        let anchor = rng.gen_range(anchors.clone());
        let side = if biased { membership_side(timeline, anchor) } else { None };
        let t = draw_around(anchor, len, params, side, rng);
        fp += usize::from(seg[t.positive] != seg[t.anchor]);
        fneg += usize::from(lab[t.negative] == lab[t.anchor]);
    }
    Ok(MonteCarloRates {
        fp_rate: fp as f64 / trials as f64,
        fn_rate: fneg as f64 / trials as f64,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelScheme {
    /// Labels 0, 1, …, n-1, 0, 1, …
    Cycle,
    /// Uniform labels, never repeating the previous segment's label when more than one exists.
    Random,
}

/// Random contiguous timeline with segment lengths uniform on `length_range`.
pub fn synth_timeline<R: Rng + ?Sized>(
    n_segments: usize,
    length_range: (usize, usize),
    n_labels: usize,
    scheme: LabelScheme,
    rng: &mut R,
) -> Result<SegmentTimeline, SamplingError> {
    let (lo, hi) = length_range;
    if n_segments == 0 || n_labels == 0 || lo == 0 || lo > hi {
        return Err(SamplingError::InvalidParams(format!(
            "n_segments {n_segments}, n_labels {n_labels}, lengths {lo}..={hi}"
        )));
    }
    let mut lengths = Vec::with_capacity(n_segments);
    let mut labels = Vec::with_capacity(n_segments);
    for n in 0..n_segments {
        lengths.push(rng.gen_range(lo..=hi));
        let label = match scheme {
            LabelScheme::Cycle => n % n_labels,
            LabelScheme::Random if n_labels == 1 => 0,
            LabelScheme::Random => loop {
                let l = rng.gen_range(0..n_labels);
                if labels.last() != Some(&l) {
                    break l;
                }
            },
        };
        labels.push(label);
    }
    SegmentTimeline::from_lengths(&lengths, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Exact FP probability by enumerating every anchor and every positive.
    fn exact_fp(timeline: &SegmentTimeline, params: &SamplingParams, anchors: RangeInclusive<usize>) -> f64 {
        let len = timeline.len();
        let n_anchors = anchors.clone().count() as f64;
        anchors
            .map(|a| {
                let (lo, hi) = params.positive_range(a, len);
                let own = timeline.segment_at(a);
                let out = (lo..=hi).filter(|&p| timeline.segment_at(p) != own).count();
                out as f64 / (hi - lo + 1) as f64
            })
            .sum::<f64>()
            / n_anchors
    }

    /// Exact FN probability by enumeration over the deduplicated negative union.
    fn exact_fn(timeline: &SegmentTimeline, params: &SamplingParams) -> f64 {
        let len = timeline.len();
        (0..len)
            .map(|a| {
                let [b, c] = params.negative_ranges(a, len);
                let mut idx: Vec<usize> = (b.0..=b.1).chain(c.0..=c.1).collect();
                idx.sort_unstable();
                idx.dedup();
                let same = idx.iter().filter(|&&i| timeline.label_at(i) == timeline.label_at(a)).count();
                same as f64 / idx.len() as f64
            })
            .sum::<f64>()
            / len as f64
    }

    #[test]
    fn default_params() {
        let p = SamplingParams::default();
        assert_eq!((p.delta_p, p.delta_n_min, p.delta_n_max), (16, 1, 96));
        assert!(p.validate().is_ok());
        assert!(SamplingParams { delta_n_min: 96, ..p }.validate().is_err());
        assert!(SamplingParams { delta_p: 0, ..p }.validate().is_err());
    }

    #[test]
    fn regions_for_interior_anchor() {
        let p = SamplingParams::default();
        assert_eq!(p.positive_range(100, 1000), (84, 116));
        assert_eq!(p.negative_ranges(100, 1000), [(4, 99), (101, 196)]);
        let mut r = rng(1);
        for _ in 0..2000 {
            let t = sample_triplet_at(100, 1000, &p, &mut r).unwrap();
            assert!((84..=116).contains(&t.positive));
            assert!((4..=99).contains(&t.negative) || (101..=196).contains(&t.negative));
        }
    }

    #[test]
    fn left_clipping() {
        let p = SamplingParams::default();
        assert_eq!(p.positive_range(0, 1000), (0, 16));
        let mut r = rng(2);
        for _ in 0..500 {
            assert!(sample_triplet_at(0, 1000, &p, &mut r).unwrap().positive <= 16);
        }
    }

    #[test]
    fn positive_is_uniform_chi_square() {
        let p = SamplingParams::default();
        let mut r = rng(3);
        let mut counts = [0usize; 33];
        let n = 100_000;
        for _ in 0..n {
            let t = sample_triplet_at(100, 1000, &p, &mut r).unwrap();
            counts[t.positive - 84] += 1;
        }
        let expected = n as f64 / 33.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 32 degrees of freedom; upper 0.001 quantile is 62.49.
        assert!(chi2 < 62.49, "chi2 {chi2}");
    }

    #[test]
    fn overlapping_negative_regions_are_deduplicated() {
        // Both clipped regions collapse onto the last index for an anchor at the end.
        let p = SamplingParams {
            delta_p: 2,
            delta_n_min: 1,
            delta_n_max: 3,
        };
        let mut r = rng(4);
        let mut counts = [0usize; 5];
        for _ in 0..40_000 {
            counts[sample_triplet_at(4, 5, &p, &mut r).unwrap().negative] += 1;
        }
        // before = {1,2,3}, after = {4}: uniform over four indices
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.015, "{counts:?}");
        }
        let mut r2 = rng(9);
        for _ in 0..200 {
            assert!((3..=5).contains(&uniform_in_union(&mut r2, (3, 5), (5, 5))));
        }
    }

    #[test]
    fn too_short_track_is_rejected() {
        let p = SamplingParams {
            delta_p: 4,
            delta_n_min: 10,
            delta_n_max: 20,
        };
        assert_eq!(
            sample_triplet(20, &p, &mut rng(0)),
            Err(SamplingError::EmptyNegativeRegion { len: 20, delta_n_min: 10 })
        );
        assert!(sample_triplet(21, &p, &mut rng(0)).is_ok());
    }

    #[test]
    fn side_restrictions() {
        let p = SamplingParams::default();
        let mut r = rng(5);
        for _ in 0..2000 {
            let t = sample_triplet_on_side(100, 1000, &p, Side::Before, &mut r).unwrap();
            assert!((84..=100).contains(&t.positive));
            assert!((101..=196).contains(&t.negative));
            let t = sample_triplet_on_side(100, 1000, &p, Side::After, &mut r).unwrap();
            assert!((100..=116).contains(&t.positive));
            assert!((4..=99).contains(&t.negative));
        }
    }

    #[test]
    fn empty_restricted_negative_falls_back() {
        let p = SamplingParams::default();
        // Anchor 0 with the positive "after" leaves nothing before it for the negative.
        assert_eq!(restricted_negative(&p, 0, 1000, Side::After), None);
        let mut r = rng(6);
        let mut seen_after = false;
        for _ in 0..500 {
            let t = sample_triplet_on_side(0, 1000, &p, Side::After, &mut r).unwrap();
            assert!(t.negative <= 96);
            seen_after |= t.negative > 0;
        }
        assert!(seen_after);
    }

    #[test]
    fn fp_formula_branches() {
        assert_eq!(fp_probability(64.0, 16.0, false), 0.0625);
        assert!((fp_probability(24.0, 16.0, false) - 2.0 / 9.0).abs() < 1e-12);
        assert_eq!(fp_probability(8.0, 16.0, false), 3.0);
        assert_eq!(fp_probability(8.0, 16.0, true), 1.0);
    }

    #[test]
    fn fn_formula_examples() {
        let p = SamplingParams::default();
        let one = SegmentTimeline::from_lengths(&[1000], &[0]).unwrap();
        assert!((fn_probability(&one, 0, &p, false) - 0.00025).abs() < 1e-12);

        let t = SegmentTimeline::from_lengths(&[100, 300, 200, 400], &[0, 1, 0, 2]).unwrap();
        assert_eq!(t.class_total(0), 300);
        assert!((fn_probability(&t, 0, &p, false) + 0.6975).abs() < 1e-12);
        assert_eq!(fn_probability(&t, 0, &p, true), 0.0);
    }

    #[test]
    fn single_segment_rates() {
        let t = SegmentTimeline::from_lengths(&[400], &[0]).unwrap();
        let r = monte_carlo_rates(&t, &SamplingParams::default(), false, 5000, &mut rng(7)).unwrap();
        assert_eq!((r.fp_rate, r.fn_rate), (0.0, 1.0));
        let r = monte_carlo_rates(&t, &SamplingParams::default(), true, 5000, &mut rng(7)).unwrap();
        assert_eq!((r.fp_rate, r.fn_rate), (0.0, 1.0));
    }

    #[test]
    fn monte_carlo_matches_exact_enumeration() {
        let t = SegmentTimeline::from_lengths(&[64; 16], &(0..16).collect::<Vec<_>>()).unwrap();
        let p = SamplingParams::default();
        let anchors = 100..=923;
        let exact = exact_fp(&t, &p, anchors.clone());
        let mc = monte_carlo_rates_within(&t, &p, false, 100_000, anchors, &mut rng(8)).unwrap();
        assert!((mc.fp_rate - exact).abs() < 0.005, "mc {} exact {exact}", mc.fp_rate);
        // The closed form's third branch (δp / 4l = 0.0625) is half the enumerated rate.
        assert!((exact - 16.0 * 17.0 / (33.0 * 64.0)).abs() < 2e-3);
        assert!((fp_probability(64.0, 16.0, false) - exact).abs() > 0.05);
    }

    #[test]
    fn monte_carlo_fn_matches_exact_enumeration() {
        let t = SegmentTimeline::from_lengths(&[40, 60, 50, 30, 70], &[0, 1, 0, 2, 1]).unwrap();
        let p = SamplingParams {
            delta_p: 8,
            delta_n_min: 4,
            delta_n_max: 60,
        };
        let exact = exact_fn(&t, &p);
        let mc = monte_carlo_rates(&t, &p, false, 100_000, &mut rng(10)).unwrap();
        assert!((mc.fn_rate - exact).abs() < 0.006, "mc {} exact {exact}", mc.fn_rate);
    }

    #[test]
    fn fp_rate_grows_with_delta_p() {
        let t = SegmentTimeline::from_lengths(&[64; 16], &(0..16).collect::<Vec<_>>()).unwrap();
        let mut last = -1.0;
        for dp in [2, 4, 8, 16, 32] {
            let p = SamplingParams {
                delta_p: dp,
                ..Default::default()
            };
            let r = monte_carlo_rates(&t, &p, false, 50_000, &mut rng(11)).unwrap();
            assert!(r.fp_rate >= last, "{dp}: {} < {last}", r.fp_rate);
            last = r.fp_rate;
        }
    }

    #[test]
    fn membership_oracle_reduces_false_positives() {
        let t = SegmentTimeline::from_lengths(&[48; 12], &(0..12).collect::<Vec<_>>()).unwrap();
        let p = SamplingParams::default();
        let plain = monte_carlo_rates(&t, &p, false, 50_000, &mut rng(12)).unwrap();
        let biased = monte_carlo_rates(&t, &p, true, 50_000, &mut rng(12)).unwrap();
        assert!(biased.fp_rate < plain.fp_rate);
    }

    #[test]
    fn membership_side_rules() {
        let t = SegmentTimeline::from_lengths(&[50, 50], &[0, 1]).unwrap();
        assert_eq!(membership_side(&t, 5), None);
        assert_eq!(membership_side(&t, 45), Some(Side::Before));
        assert_eq!(membership_side(&t, 55), Some(Side::After));
        let flat = SegmentTimeline::from_lengths(&[100], &[0]).unwrap();
        assert_eq!(membership_side(&flat, 50), Some(Side::After));
    }

    #[test]
    fn timeline_validation_and_lookup() {
        assert!(SegmentTimeline::new(vec![]).is_err());
        assert!(SegmentTimeline::new(vec![Segment { start: 1, end: 4, label: 0 }]).is_err());
        assert!(SegmentTimeline::new(vec![
            Segment { start: 0, end: 4, label: 0 },
            Segment { start: 4, end: 4, label: 1 }
        ])
        .is_err());
        let t = SegmentTimeline::from_lengths(&[3, 2, 5], &[0, 1, 0]).unwrap();
        assert_eq!(t.len(), 10);
        assert_eq!((t.segment_at(0), t.segment_at(2), t.segment_at(3), t.segment_at(9)), (0, 0, 1, 2));
        assert_eq!(t.min_same_label_separation(), Some(2));
    }

    #[test]
    fn synth_examples() {
        let one = synth_timeline(1, (30, 30), 1, LabelScheme::Cycle, &mut rng(0)).unwrap();
        assert_eq!(one.segments(), &[Segment { start: 0, end: 30, label: 0 }]);
        let abab = synth_timeline(4, (50, 50), 2, LabelScheme::Cycle, &mut rng(0)).unwrap();
        assert_eq!(abab.len(), 200);
        assert_eq!(abab.segments().iter().map(|s| s.label).collect::<Vec<_>>(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let p = SamplingParams::default();
        let a: Vec<_> = {
            let mut r = rng(42);
            (0..100).map(|_| sample_triplet(500, &p, &mut r).unwrap()).collect()
        };
        let b: Vec<_> = {
            let mut r = rng(42);
            (0..100).map(|_| sample_triplet(500, &p, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn triplets_stay_in_range(len in 3usize..400, dp in 1usize..40, dmin in 0usize..20, extra in 1usize..100, seed: u64) {
            let p = SamplingParams { delta_p: dp, delta_n_min: dmin, delta_n_max: dmin + extra };
            prop_assume!(len >= 2 * dmin + 1);
            let mut r = rng(seed);
            for _ in 0..50 {
                let t = sample_triplet(len, &p, &mut r).unwrap();
                prop_assert!(t.anchor < len && t.positive < len && t.negative < len);
                prop_assert!(t.anchor.abs_diff(t.positive) <= dp);
                prop_assert!(t.anchor.abs_diff(t.negative) <= dmin + extra);
            }
        }

        #[test]
        fn synthetic_timelines_are_valid(n in 1usize..12, lo in 1usize..30, span in 0usize..30, labels in 1usize..5, random: bool, seed: u64) {
            let scheme = if random { LabelScheme::Random } else { LabelScheme::Cycle };
            let t = synth_timeline(n, (lo, lo + span), labels, scheme, &mut rng(seed)).unwrap();
            prop_assert_eq!(t.segments().len(), n);
            prop_assert!(SegmentTimeline::new(t.segments().to_vec()).is_ok());
            prop_assert!(t.segments().iter().all(|s| (lo..=lo + span).contains(&s.len()) && s.label < labels));
        }

        #[test]
        fn third_branch_is_nonincreasing(d in 1u32..64, l in 2u32..400) {
            let (d, l) = (d as f64, l as f64);
            prop_assume!(l >= 2.0 * d);
            prop_assert!(fp_probability(l + 1.0, d, false) <= fp_probability(l, d, false));
        }
    }
}
