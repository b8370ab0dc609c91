//! Exhaustive mutual nearest-neighbor matching with a bidirectional ratio
//! test, and the mapping from a method's sweep value to its effective
//! matching thresholds.
//!
//! The mutual pairs and their two ratios do not depend on the threshold, so
//! [`mutual_candidates`] is computed once per image pair and
//! [`filter_candidates`] applies each threshold of a sweep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_io::{
    hamming_distance, l2_distance, DescriptorKind, DescriptorMatrix, DescriptorRow,
    FeatureIoError, FeatureSet, Keypoint, Metric, ScoredMatchFile,
};
use crate::geometry::{Correspondence, Point2};

/// Sweep values are accepted within this distance outside `[0.1, 1.0]`.
const SWEEP_TOLERANCE: f64 = 1e-9;
/// Slack applied when comparing stored f32 confidences with a cutoff.
const CONFIDENCE_SLACK: f64 = 1e-6;

pub const MIN_SWEEP_VALUE: f64 = 0.1;
pub const MAX_SWEEP_VALUE: f64 = 1.0;
/// Ratio thresholds of the two deepest layers in the DFM schedule.
pub const DFM_FIXED_LAYERS: [f64; 2] = [0.90, 0.95];

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("cannot search an empty descriptor set")]
    EmptySet,
    #[error(transparent)]
    Descriptor(#[from] FeatureIoError),
    #[error("sweep value {0} outside [0.1, 1.0]")]
    OutOfRange(f64),
    #[error("ratio threshold {0} outside (0, 1]")]
    InvalidRatio(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub dist: f64,
    /// Nearest over second-nearest distance searching A -> B.
    pub ratio_a: f64,
    /// Nearest over second-nearest distance searching B -> A.
    pub ratio_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub matches: Vec<Match>,
    pub threshold_used: f64,
    pub metric: Metric,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Keypoint coordinates of each match as `(A point, B point)`.
    pub fn correspondences(&self, a: &[Keypoint], b: &[Keypoint]) -> Vec<Correspondence> {
        to_correspondences(&self.matches, a, b)
    }
}

pub fn to_correspondences(matches: &[Match], a: &[Keypoint], b: &[Keypoint]) -> Vec<Correspondence> {
    matches
        .iter()
        .map(|m| {
            let (p, q) = (&a[m.index_a], &b[m.index_b]);
            Correspondence::new(
                Point2::new(f64::from(p.x), f64::from(p.y)),
                Point2::new(f64::from(q.x), f64::from(q.y)),
            )
        })
        .collect()
}

/// Whether the ratio test applies to both search directions or only A -> B.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    #[default]
    Bidirectional,
    Unidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearestTwo {
    pub index: usize,
    pub best: f64,
    /// `+inf` when the set has a single row.
    pub second: f64,
}

impl NearestTwo {
    pub fn ratio(&self) -> f64 {
        distance_ratio(self.best, self.second)
    }
}

/// `best / second`; 0 without a second neighbor, 1 when both are zero.
pub fn distance_ratio(best: f64, second: f64) -> f64 {
    if second.is_infinite() {
        0.0
    } else if second == 0.0 {
        1.0
    } else {
        best / second
    }
}

#[derive(Clone, Copy)]
struct Tracker {
    index: usize,
    best: f64,
    second: f64,
}

impl Tracker {
    const EMPTY: Tracker = Tracker {
        index: usize::MAX,
        best: f64::INFINITY,
        second: f64::INFINITY,
    };

    /// Candidates must arrive in ascending index order so ties keep the
    /// lowest index.
    #[inline]
    fn offer(&mut self, index: usize, d: f64) {
        if d < self.best || self.index == usize::MAX {
            self.second = self.best;
            self.best = d;
            self.index = index;
        } else if d < self.second {
            self.second = d;
        }
    }
}

fn check_metric(kind: DescriptorKind, metric: Metric) -> Result<(), MatchError> {
    if Metric::for_kind(kind) != metric {
        return Err(FeatureIoError::MetricMismatch { metric, kind }.into());
    }
    Ok(())
}

/// Nearest and second-nearest rows of `set` to `q`; ties go to the lower row.
pub fn nearest_two(q: DescriptorRow<'_>, set: &DescriptorMatrix, metric: Metric) -> Result<NearestTwo, MatchError> {
    check_metric(q.kind(), metric)?;
    check_metric(set.kind(), metric)?;
    if set.rows() == 0 {
        return Err(MatchError::EmptySet);
    }
    let mut t = Tracker::EMPTY;
    for j in 0..set.rows() {
        t.offer(j, crate::feature_io::distance(q, set.row(j), metric)?);
    }
    Ok(NearestTwo {
        index: t.index,
        best: t.best,
        second: t.second,
    })
}

/// Single pass over the full distance matrix, tracking the two nearest
/// neighbors of every row of `a` and of every row of `b`.
fn scan<T>(a: &[T], b: &[T], stride: usize, dist: impl Fn(&[T], &[T]) -> f64) -> (Vec<Tracker>, Vec<Tracker>) {
    let n = a.len() / stride;
    let m = b.len() / stride;
    let mut rows = vec![Tracker::EMPTY; n];
    let mut cols = vec![Tracker::EMPTY; m];
    for (i, ra) in a.chunks_exact(stride).enumerate() {
        let row = &mut rows[i];
        for (j, rb) in b.chunks_exact(stride).enumerate() {
            let d = dist(ra, rb);
            row.offer(j, d);
            cols[j].offer(i, d);
        }
    }
    (rows, cols)
}

/// All mutual nearest-neighbor pairs with both directional ratios, sorted by
/// `index_a`. Empty when either side has no rows.
pub fn mutual_candidates(
    a: &DescriptorMatrix,
    b: &DescriptorMatrix,
    metric: Metric,
) -> Result<Vec<Match>, MatchError> {
    check_metric(a.kind(), metric)?;
    check_metric(b.kind(), metric)?;
    if a.dim() != b.dim() {
        return Err(FeatureIoError::DimensionMismatch(a.dim(), b.dim()).into());
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Ok(Vec::new());
    }
    let (rows, cols) = match (a, b) {
        (DescriptorMatrix::Float32 { dim, data: da }, DescriptorMatrix::Float32 { data: db, .. }) => {
            scan(da, db, *dim, l2_distance)
        }
        (DescriptorMatrix::PackedBinary { data: da, .. }, DescriptorMatrix::PackedBinary { data: db, .. }) => {
            scan(da, db, a.row_stride(), |x, y| f64::from(hamming_distance(x, y)))
        }
        _ => unreachable!("kinds checked against the metric"),
    };
    Ok(rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let c = &cols[r.index];
            (c.index == i).then(|| Match {
                index_a: i,
                index_b: r.index,
                dist: r.best,
                ratio_a: distance_ratio(r.best, r.second),
                ratio_b: distance_ratio(c.best, c.second),
            })
        })
        .collect())
}

fn check_ratio(r: f64) -> Result<(), MatchError> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(MatchError::InvalidRatio(r))
    }
}

/// Keeps candidates whose ratios pass `r` (inclusive).
pub fn filter_candidates(candidates: &[Match], r: f64, mode: RatioMode) -> Vec<Match> {
    candidates
        .iter()
        .filter(|m| {
            m.ratio_a <= r
                && match mode {
                    RatioMode::Bidirectional => m.ratio_b <= r,
                    RatioMode::Unidirectional => true,
                }
        })
        .copied()
        .collect()
}

/// Mutual nearest neighbors that pass the ratio test in both directions.
pub fn match_mnns_brt(a: &FeatureSet, b: &FeatureSet, r: f64, metric: Metric) -> Result<MatchSet, MatchError> {
    match_with_mode(a, b, r, metric, RatioMode::Bidirectional)
}

pub fn match_with_mode(
    a: &FeatureSet,
    b: &FeatureSet,
    r: f64,
    metric: Metric,
    mode: RatioMode,
) -> Result<MatchSet, MatchError> {
    check_ratio(r)?;
    let candidates = mutual_candidates(&a.descriptors, &b.descriptors, metric)?;
    Ok(MatchSet {
        matches: filter_candidates(&candidates, r, mode),
        threshold_used: r,
        metric,
    })
}

/// How a method's single sweep value is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Sweep value is the ratio-test threshold.
    RatioTest,
    /// Sweep value is one minus the confidence cutoff.
    ConfidenceFilter,
    /// Sweep value is the product of the three shallow-layer ratio thresholds.
    DfmSchedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdAssignment {
    Ratio(f64),
    ConfidenceCutoff(f64),
    /// Per-layer ratio thresholds, shallowest first.
    LayerSchedule([f64; 5]),
}

/// Rounds up to two decimals, ignoring float noise just above a grid value.
fn ceil_hundredths(x: f64) -> f64 {
    (x * 100.0 - 1e-9).ceil() / 100.0
}

fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

pub fn check_sweep_value(t: f64) -> Result<(), MatchError> {
    if (MIN_SWEEP_VALUE - SWEEP_TOLERANCE..=MAX_SWEEP_VALUE + SWEEP_TOLERANCE).contains(&t) {
        Ok(())
    } else {
        Err(MatchError::OutOfRange(t))
    }
}

pub fn effective_thresholds(kind: MethodKind, t: f64) -> Result<ThresholdAssignment, MatchError> {
    check_sweep_value(t)?;
    Ok(match kind {
        MethodKind::RatioTest => ThresholdAssignment::Ratio(t),
        MethodKind::ConfidenceFilter => ThresholdAssignment::ConfidenceCutoff(snap(1.0 - t)),
        MethodKind::DfmSchedule => {
            let shallow = ceil_hundredths(t.cbrt());
            ThresholdAssignment::LayerSchedule([
                shallow,
                shallow,
                shallow,
                DFM_FIXED_LAYERS[0],
                DFM_FIXED_LAYERS[1],
            ])
        }
    })
}

/// Entries with `confidence >= 1 - t`, in file order.
pub fn filter_scored_matches(m: &ScoredMatchFile, t: f64) -> Vec<Correspondence> {
    let cutoff = snap(1.0 - t);
    m.entries
        .iter()
        .filter(|e| f64::from(e.confidence) + CONFIDENCE_SLACK >= cutoff)
        .map(|e| {
            Correspondence::new(
                Point2::new(f64::from(e.x1), f64::from(e.y1)),
                Point2::new(f64::from(e.x2), f64::from(e.y2)),
            )
        })
        .collect()
}
