//! Reference annotations and trimmed boundary hit rates.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Boundaries closer than this to either end of a track are not scored.
pub const TRIM_RADIUS_SEC: f64 = 0.5;
pub const DEFAULT_WINDOW_SEC: f64 = 3.0;
const CONTIGUITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: interval starting at {start} overlaps the previous one ending at {prev_end}")]
    Overlap { line: usize, start: f64, prev_end: f64 },
    #[error("line {line}: gap between {prev_end} and {start}")]
    Gap { line: usize, start: f64, prev_end: f64 },
    #[error("no intervals in annotation")]
    Empty,
    #[error("no tracks to evaluate")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

/// Contiguous labelled intervals covering `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub intervals: Vec<Interval>,
    /// 0, every interior edge, and the duration.
    pub boundaries_sec: Vec<f64>,
    pub duration_sec: f64,
}

impl AnnotationSet {
    pub fn from_intervals(intervals: Vec<Interval>) -> Result<Self, EvalError> {
        if intervals.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut prev_end = 0.0;
        for (n, iv) in intervals.iter().enumerate() {
            let line = n + 1;
            if !(iv.end > iv.start) {
                return Err(EvalError::Parse {
                    line,
                    message: format!("end {} not after start {}", iv.end, iv.start),
                });
            }
            if iv.start < prev_end - CONTIGUITY_TOLERANCE {
                return Err(EvalError::Overlap {
                    line,
                    start: iv.start,
                    prev_end,
                });
            }
            if iv.start > prev_end + CONTIGUITY_TOLERANCE {
                return Err(EvalError::Gap {
                    line,
                    start: iv.start,
                    prev_end,
                });
            }
            prev_end = iv.end;
        }
        let mut boundaries_sec: Vec<f64> = std::iter::once(0.0).chain(intervals.iter().map(|iv| iv.end)).collect();
        boundaries_sec.dedup();
        Ok(Self {
            duration_sec: prev_end,
            intervals,
            boundaries_sec,
        })
    }

    /// Parses `start<TAB>end<TAB>label` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut intervals = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 {
                return Err(EvalError::Parse {
                    line: n + 1,
                    message: format!("expected start, end and label, got '{line}'"),
                });
            }
            let num = |s: &str| -> Result<f64, EvalError> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| EvalError::Parse {
                        line: n + 1,
                        message: format!("not a number: '{s}'"),
                    })
            };
            intervals.push(Interval {
                start: num(fields[0])?,
                end: num(fields[1])?,
                label: fields.get(2).map(|s| s.trim().to_string()).unwrap_or_default(),
            });
        }
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        Self::from_intervals(intervals)
    }

    pub fn to_tsv(&self) -> String {
        self.intervals
            .iter()
            .map(|iv| format!("{:.6}\t{:.6}\t{}\n", iv.start, iv.end, iv.label))
            .collect()
    }
}

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet, EvalError> {
    AnnotationSet::parse(&fs::read_to_string(path)?)
}

/// Drops boundaries within [`TRIM_RADIUS_SEC`] of 0 or of `duration`.
pub fn trim(boundaries: &[f64], duration: f64) -> Vec<f64> {
    boundaries
        .iter()
        .copied()
        .filter(|&t| t > TRIM_RADIUS_SEC && t < duration - TRIM_RADIUS_SEC)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMetrics {
    pub f_measure: f64,
    pub precision: f64,
    pub recall: f64,
    pub window_sec: f64,
    pub n_hits: usize,
    pub n_est: usize,
    pub n_ref: usize,
}

impl BoundaryMetrics {
    pub fn from_counts(n_hits: usize, n_est: usize, n_ref: usize, window_sec: f64) -> Self {
        let ratio = |n: usize| if n == 0 { 0.0 } else { n_hits as f64 / n as f64 };
        let (precision, recall) = (ratio(n_est), ratio(n_ref));
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            f_measure,
            precision,
            recall,
            window_sec,
            n_hits,
            n_est,
            n_ref,
        }
    }
}

/// Size of a maximum matching where `e` and `r` may pair when `|e − r| ≤ window`.
///
/// On the line, scanning both sorted lists and pairing the first compatible
/// pair is optimal: the earliest unmatched estimate can only lose options by
/// waiting.
pub fn count_hits(est: &[f64], reference: &[f64], window: f64) -> usize {
    let mut e = est.to_vec();
    let mut r = reference.to_vec();
    e.sort_by(f64::total_cmp);
    r.sort_by(f64::total_cmp);
    let (mut i, mut j, mut hits) = (0, 0, 0);
    while i < e.len() && j < r.len() {
        if (e[i] - r[j]).abs() <= window {
            hits += 1;
            i += 1;
            j += 1;
        } else if e[i] < r[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    hits
}

pub fn hit_rate(est: &[f64], reference: &[f64], window: f64) -> BoundaryMetrics {
    BoundaryMetrics::from_counts(count_hits(est, reference, window), est.len(), reference.len(), window)
}

/// One track's estimate and reference, untrimmed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPair {
    pub id: String,
    pub estimated: Vec<f64>,
    pub reference: Vec<f64>,
    pub duration_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub id: String,
    pub f: f64,
    pub p: f64,
    pub r: f64,
    pub n_hits: usize,
    pub n_est: usize,
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub window_sec: f64,
    pub per_track: Vec<TrackReport>,
    pub mean_f: f64,
    pub std_f: f64,
    pub mean_p: f64,
    pub std_p: f64,
    pub mean_r: f64,
    pub std_r: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<TrackFailure>,
}

impl CorpusReport {
    /// `F=0.662 ± 0.17  P=… ± …  R=… ± …`
    pub fn summary(&self) -> String {
        format!(
            "F={:.3} \u{b1} {:.2}  P={:.3} \u{b1} {:.2}  R={:.3} \u{b1} {:.2}  ({} tracks, {:.1} s window)",
            self.mean_f,
            self.std_f,
            self.mean_p,
            self.std_p,
            self.mean_r,
            self.std_r,
            self.per_track.len(),
            self.window_sec
        )
    }
}

/// Mean and population standard deviation.
fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trims both sides of every pair, scores them, and aggregates across tracks.
pub fn evaluate_corpus(pairs: &[TrackPair], window: f64) -> Result<CorpusReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let per_track: Vec<TrackReport> = pairs
        .iter()
        .map(|p| {
            let m = hit_rate(
                &trim(&p.estimated, p.duration_sec),
                &trim(&p.reference, p.duration_sec),
                window,
            );
            TrackReport {
                id: p.id.clone(),
                f: m.f_measure,
                p: m.precision,
                r: m.recall,
                n_hits: m.n_hits,
                n_est: m.n_est,
                n_ref: m.n_ref,
            }
        })
        .collect();
    let (mean_f, std_f) = mean_std(per_track.iter().map(|t| t.f));
    let (mean_p, std_p) = mean_std(per_track.iter().map(|t| t.p));
    let (mean_r, std_r) = mean_std(per_track.iter().map(|t| t.r));
    Ok(CorpusReport {
        window_sec: window,
        per_track,
        mean_f,
        std_f,
        mean_p,
        std_p,
        mean_r,
        std_r,
        errors: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive maximum matching over subsets of used references.
    fn brute_force_hits(est: &[f64], reference: &[f64], window: f64) -> usize {
        fn go(i: usize, used: u32, est: &[f64], r: &[f64], w: f64) -> usize {
            if i == est.len() {
                return 0;
            }
            let mut best = go(i + 1, used, est, r, w);
            for (j, &t) in r.iter().enumerate() {
                if used & (1 << j) == 0 && (est[i] - t).abs() <= w {
                    best = best.max(1 + go(i + 1, used | (1 << j), est, r, w));
                }
            }
            best
        }
        go(0, 0, est, reference, window)
    }

    #[test]
    fn parse_examples() {
        let a = AnnotationSet::parse("0\t10\tA\n10\t25\tB\n").unwrap();
        assert_eq!(a.boundaries_sec, vec![0.0, 10.0, 25.0]);
        assert_eq!(a.duration_sec, 25.0);
        assert!(matches!(
            AnnotationSet::parse("0\t10\tA\n9\t25\tB\n"),
            Err(EvalError::Overlap { .. })
        ));
        assert!(matches!(AnnotationSet::parse("0\t10\tA\n11\t25\tB\n"), Err(EvalError::Gap { .. })));
        assert!(matches!(AnnotationSet::parse("2\t10\tA\n"), Err(EvalError::Gap { .. })));
        assert!(matches!(AnnotationSet::parse("0\tten\tA\n"), Err(EvalError::Parse { .. })));
        assert!(matches!(AnnotationSet::parse("\n# nothing\n"), Err(EvalError::Empty)));
    }

    #[test]
    fn tsv_round_trip() {
        let a = AnnotationSet::parse("0\t10.5\tverse\n10.5\t25\tchorus\n").unwrap();
        assert_eq!(AnnotationSet::parse(&a.to_tsv()).unwrap(), a);
    }

    #[test]
    fn trim_examples() {
        assert_eq!(trim(&[0.0, 10.0, 25.0], 25.0), vec![10.0]);
        assert!(trim(&[], 25.0).is_empty());
        assert_eq!(trim(&[0.3, 10.0, 24.8], 25.0), vec![10.0]);
    }

    #[test]
    fn hit_rate_examples() {
        let m = hit_rate(&[5.0, 9.0], &[5.0, 9.0], 3.0);
        assert_eq!((m.precision, m.recall, m.f_measure), (1.0, 1.0, 1.0));
        let m = hit_rate(&[10.0, 20.0], &[11.0, 40.0], 3.0);
        assert_eq!((m.n_hits, m.precision, m.recall, m.f_measure), (1, 0.5, 0.5, 0.5));
        let m = hit_rate(&[10.0, 12.0], &[11.0], 3.0);
        assert_eq!((m.n_hits, m.precision, m.recall), (1, 0.5, 1.0));
        assert!((m.f_measure - 2.0 / 3.0).abs() < 1e-15);
        let m = hit_rate(&[], &[3.0], 3.0);
        assert_eq!((m.precision, m.recall, m.f_measure), (0.0, 0.0, 0.0));
    }

    #[test]
    fn greedy_by_distance_counterexample_is_handled() {
        // Pairing 0.9 with its nearest estimate 1 leaves 0 and 3.5 unmatched.
        assert_eq!(count_hits(&[0.0, 1.0], &[0.9, 3.5], 3.0), 2);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let ne = rng.gen_range(0..=8);
            let nr = rng.gen_range(0..=8);
            let est: Vec<f64> = (0..ne).map(|_| rng.gen_range(0.0..40.0)).collect();
            let reference: Vec<f64> = (0..nr).map(|_| rng.gen_range(0.0..40.0)).collect();
            assert_eq!(count_hits(&est, &reference, 3.0), brute_force_hits(&est, &reference, 3.0));
        }
    }

    #[test]
    fn corpus_aggregation() {
        let one = TrackPair {
            id: "a".into(),
            estimated: vec![0.0, 10.0, 20.0, 30.0],
            reference: vec![0.0, 11.0, 40.0, 60.0],
            duration_sec: 60.0,
        };
        let r = evaluate_corpus(std::slice::from_ref(&one), 3.0).unwrap();
        assert_eq!((r.mean_f, r.std_f), (r.per_track[0].f, 0.0));

        let mk = |id: &str, est: Vec<f64>| TrackPair {
            id: id.into(),
            estimated: est,
            reference: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            duration_sec: 60.0,
        };
        // 2 and 4 hits out of 5 on both sides
        let f_of = |hits, ne, nr| BoundaryMetrics::from_counts(hits, ne, nr, 3.0).f_measure;
        assert!((f_of(2, 5, 5) - 0.4).abs() < 1e-12);
        assert!((f_of(4, 5, 5) - 0.8).abs() < 1e-12);
        let r = evaluate_corpus(
            &[
                mk("x", vec![10.0, 20.0, 33.5, 43.5, 53.5]),
                mk("y", vec![10.0, 20.0, 30.0, 40.0, 56.0]),
            ],
            3.0,
        )
        .unwrap();
        assert!((r.mean_f - 0.6).abs() < 1e-12);
        assert!((r.std_f - 0.2).abs() < 1e-12);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<CorpusReport>(&json).unwrap(), r);
        assert!(evaluate_corpus(&[], 3.0).is_err());
    }

    proptest! {
        #[test]
        fn swap_exchanges_precision_and_recall(
            est in prop::collection::vec(0.0f64..60.0, 0..10),
            reference in prop::collection::vec(0.0f64..60.0, 0..10),
        ) {
            let a = hit_rate(&est, &reference, 3.0);
            let b = hit_rate(&reference, &est, 3.0);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert!(a.n_hits <= a.n_est.min(a.n_ref));
        }

        #[test]
        fn spurious_estimate_never_raises_precision(
            est in prop::collection::vec(0.0f64..60.0, 1..10),
            reference in prop::collection::vec(0.0f64..60.0, 1..10),
            extra in 0.0f64..60.0,
        ) {
            prop_assume!(reference.iter().all(|r| (r - extra).abs() > 3.0));
            let before = hit_rate(&est, &reference, 3.0);
            let mut more = est.clone();
            more.push(extra);
            let after = hit_rate(&more, &reference, 3.0);
            prop_assert!(after.precision <= before.precision);
            prop_assert!(after.recall >= before.recall);
        }

        #[test]
        fn smaller_window_never_scores_higher(
            est in prop::collection::vec(0.0f64..60.0, 0..10),
            reference in prop::collection::vec(0.0f64..60.0, 0..10),
        ) {
            prop_assert!(hit_rate(&est, &reference, 0.5).f_measure <= hit_rate(&est, &reference, 3.0).f_measure);
        }
    }
}
