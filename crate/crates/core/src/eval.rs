//! Per-pair MMA and HEA, dataset aggregation, and the threshold sweep.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, SequenceRecord, Subset};
use crate::extractor::{ExtractError, Extractor};
use crate::feature_io::{
    load_features, load_scored_matches, FeatureIoError, FeatureSet, Metric, ScoredMatchFile,
};
use crate::geometry::{
    corner_transfer_error, ransac_homography, reprojection_error, Correspondence, Homography,
    RansacConfig,
};
use crate::matching::{
    check_sweep_value, effective_thresholds, filter_scored_matches, mutual_candidates,
    to_correspondences, MatchError, MethodKind, RatioMode, ThresholdAssignment,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to aggregate")]
    EmptyResults,
    #[error("invalid pixel grid: {0}")]
    InvalidGrid(String),
    #[error("pair {pair}: missing input {}", path.display())]
    MissingFeatures { pair: String, path: PathBuf },
    #[error("pair {pair}: {source}")]
    Load {
        pair: String,
        #[source]
        source: FeatureIoError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

/// Pixel thresholds at which accuracies are reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PixelThresholdGrid(Vec<f64>);

impl PixelThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::InvalidGrid("empty".into()));
        }
        if !values.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(EvalError::InvalidGrid(format!("{values:?} has non-positive entries")));
        }
        if !values.windows(2).all(|w| w[0] < w[1]) {
            return Err(EvalError::InvalidGrid(format!("{values:?} is not strictly increasing")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, eps: f64) -> Option<usize> {
        self.0.iter().position(|&v| v == eps)
    }
}

impl Default for PixelThresholdGrid {
    fn default() -> Self {
        Self((1..=10).map(f64::from).collect())
    }
}

impl TryFrom<Vec<f64>> for PixelThresholdGrid {
    type Error = EvalError;
    fn try_from(v: Vec<f64>) -> Result<Self, EvalError> {
        Self::new(v)
    }
}

impl From<PixelThresholdGrid> for Vec<f64> {
    fn from(g: PixelThresholdGrid) -> Self {
        g.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mma,
    Hea,
}

impl MetricKind {
    pub const ALL: [MetricKind; 2] = [MetricKind::Mma, MetricKind::Hea];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Mma => "mma",
            MetricKind::Hea => "hea",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mma" => Some(MetricKind::Mma),
            "hea" => Some(MetricKind::Hea),
            _ => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_ascii_uppercase())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Overall,
    Illumination,
    Viewpoint,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Overall, Scope::Illumination, Scope::Viewpoint];

    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Overall => "overall",
            Scope::Illumination => "illumination",
            Scope::Viewpoint => "viewpoint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Scope::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn includes(self, subset: Subset) -> bool {
        match self {
            Scope::Overall => true,
            Scope::Illumination => subset == Subset::Illumination,
            Scope::Viewpoint => subset == Subset::Viewpoint,
        }
    }
}

/// Outcome of evaluating one (reference, target) pair at one sweep value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair_id: String,
    pub subset: Subset,
    pub n_matches: usize,
    /// Fraction of matches within each grid threshold.
    pub mma: Vec<f64>,
    /// Mean corner-transfer error of the estimate, `+inf` if estimation failed.
    pub hea_error: f64,
    #[serde(skip)]
    pub estimate: Option<Homography>,
}

impl PairResult {
    pub fn hea_correct(&self, grid: &PixelThresholdGrid) -> Vec<bool> {
        grid.values().iter().map(|&e| self.hea_error < e).collect()
    }

    /// Matches within each threshold, recovered from the stored fractions.
    pub fn correct_counts(&self) -> Vec<usize> {
        self.mma
            .iter()
            .map(|a| (a * self.n_matches as f64).round() as usize)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub metric: MetricKind,
    pub scope: Scope,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn auc(&self) -> f64 {
        auc(&self.values)
    }

    pub fn at(&self, grid: &PixelThresholdGrid, eps: f64) -> Option<f64> {
        grid.index_of(eps).and_then(|i| self.values.get(i).copied())
    }
}

/// Mean over the grid; on the default 1..10 grid this is the normalized area.
/// Clamped to the curve's range so rounding never leaves `[min, max]`.
pub fn auc(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub sweep_value: f64,
    /// Mean MMA curves then mean HEA curves, each in scope order; scopes with
    /// no pairs are omitted.
    pub curves: Vec<Curve>,
    pub mean_matches: f64,
    /// Mean keypoints per image; absent for scored-match sources.
    pub mean_features: Option<f64>,
}

impl SweepEntry {
    pub fn curve(&self, metric: MetricKind, scope: Scope) -> Option<&Curve> {
        self.curves.iter().find(|c| c.metric == metric && c.scope == scope)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub method: String,
    pub grid: PixelThresholdGrid,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn entry(&self, sweep_value: f64) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.sweep_value == sweep_value)
    }
}

/// Fraction of correspondences whose ground-truth reprojection error is at
/// most each grid threshold; all zeros without matches.
pub fn mma_for_pair(corrs: &[Correspondence], gt: &Homography, grid: &PixelThresholdGrid) -> Vec<f64> {
    if corrs.is_empty() {
        return vec![0.0; grid.len()];
    }
    let errors: Vec<f64> = corrs.iter().map(|c| reprojection_error(gt, c)).collect();
    let n = corrs.len() as f64;
    grid.values()
        .iter()
        .map(|&eps| errors.iter().filter(|&&e| e <= eps).count() as f64 / n)
        .collect()
}

/// RANSAC estimate plus its corner-transfer error against `gt` on the
/// reference image corners.
pub fn estimate_and_score(
    corrs: &[Correspondence],
    gt: &Homography,
    ref_size: (u32, u32),
    cfg: &RansacConfig,
) -> (Option<Homography>, f64) {
    match ransac_homography(corrs, cfg) {
        Ok(res) => {
            let err = corner_transfer_error(&res.homography, gt, ref_size);
            (Some(res.homography), err)
        }
        Err(_) => (None, f64::INFINITY),
    }
}

pub fn hea_for_pair(
    corrs: &[Correspondence],
    gt: &Homography,
    ref_size: (u32, u32),
    cfg: &RansacConfig,
    grid: &PixelThresholdGrid,
) -> (f64, Vec<bool>) {
    let (_, err) = estimate_and_score(corrs, gt, ref_size, cfg);
    (err, grid.values().iter().map(|&e| err < e).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean of per-pair accuracies.
    #[default]
    PerPair,
    /// Correct matches over all matches, pooled across pairs.
    Pooled,
}

/// MMA and HEA curves for every scope that has at least one pair.
pub fn aggregate(results: &[PairResult], grid: &PixelThresholdGrid) -> Result<Vec<Curve>, EvalError> {
    aggregate_with(results, grid, Aggregation::PerPair)
}

pub fn aggregate_with(
    results: &[PairResult],
    grid: &PixelThresholdGrid,
    mode: Aggregation,
) -> Result<Vec<Curve>, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let k = grid.len();
    let mut mma = Vec::new();
    let mut hea = Vec::new();
    for scope in Scope::ALL {
        let members: Vec<&PairResult> = results.iter().filter(|r| scope.includes(r.subset)).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mma_values = match mode {
            Aggregation::PerPair => (0..k)
                .map(|i| members.iter().map(|r| r.mma[i]).sum::<f64>() / n)
                .collect(),
            Aggregation::Pooled => {
                let total: usize = members.iter().map(|r| r.n_matches).sum();
                let mut correct = vec![0usize; k];
                for r in &members {
                    for (c, v) in correct.iter_mut().zip(r.correct_counts()) {
                        *c += v;
                    }
                }
                correct
                    .into_iter()
                    .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            }
        };
        let hea_values = grid
            .values()
            .iter()
            .map(|&e| members.iter().filter(|r| r.hea_error < e).count() as f64 / n)
            .collect();
        mma.push(Curve {
            metric: MetricKind::Mma,
            scope,
            values: mma_values,
        });
        hea.push(Curve {
            metric: MetricKind::Hea,
            scope,
            values: hea_values,
        });
    }
    mma.extend(hea);
    Ok(mma)
}

/// Per-image features for a dataset.
pub trait FeatureProvider: Sync {
    /// Features of image `index` (1-based) of `seq`.
    fn features(&self, seq: &SequenceRecord, index: usize) -> Result<Arc<FeatureSet>, EvalError>;
}

/// Scored matches per pair, optionally per sweep value.
pub trait MatchProvider: Sync {
    fn matches(
        &self,
        seq: &SequenceRecord,
        target_index: usize,
        sweep_value: Option<f64>,
    ) -> Result<ScoredMatchFile, EvalError>;
}

pub fn pair_id(seq: &str, target_index: usize) -> String {
    format!("{seq}_1_{target_index}")
}

pub fn feature_file_name(image_id: &str) -> String {
    format!("{image_id}.feat")
}

pub fn match_file_name(pair_id: &str) -> String {
    format!("{pair_id}.mtch")
}

/// Directory name for per-sweep-value inputs: `0.5`, `1.0`.
pub fn sweep_label(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.1}")
    } else {
        format!("{t}")
    }
}

/// Reads `<dir>/<seq>_<k>.feat`, falling back to the `.json` mirror.
#[derive(Clone, Debug)]
pub struct FeatureDir {
    pub dir: PathBuf,
}

impl FeatureDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, image_id: &str) -> PathBuf {
        let bin = self.dir.join(feature_file_name(image_id));
        let json = self.dir.join(format!("{image_id}.json"));
        if !bin.exists() && json.exists() {
            json
        } else {
            bin
        }
    }
}

impl FeatureProvider for FeatureDir {
    fn features(&self, seq: &SequenceRecord, index: usize) -> Result<Arc<FeatureSet>, EvalError> {
        let id = seq.image_id(index);
        let path = self.path_for(&id);
        if !path.exists() {
            return Err(EvalError::MissingFeatures { pair: id, path });
        }
        load_features(&path)
            .map(Arc::new)
            .map_err(|source| EvalError::Load { pair: id, source })
    }
}

/// Runs the built-in FAST + steered BRIEF extractor on the dataset images.
#[derive(Clone, Debug)]
pub struct ExtractorFeatures {
    pub extractor: Extractor,
}

impl FeatureProvider for ExtractorFeatures {
    fn features(&self, seq: &SequenceRecord, index: usize) -> Result<Arc<FeatureSet>, EvalError> {
        let img = seq.images[index - 1].load()?;
        Ok(Arc::new(self.extractor.extract(&img, &seq.image_id(index))?))
    }
}

/// Features keyed by image id.
#[derive(Clone, Debug, Default)]
pub struct MemoryFeatures(pub HashMap<String, Arc<FeatureSet>>);

impl FeatureProvider for MemoryFeatures {
    fn features(&self, seq: &SequenceRecord, index: usize) -> Result<Arc<FeatureSet>, EvalError> {
        let id = seq.image_id(index);
        self.0.get(&id).cloned().ok_or_else(|| EvalError::MissingFeatures {
            path: PathBuf::from(&id),
            pair: id,
        })
    }
}

/// Relative location of a pair's match file: `<pair>.mtch`, or
/// `<t>/<pair>.mtch` for per-sweep-value inputs.
pub fn match_file_relpath(pair_id: &str, sweep_value: Option<f64>) -> PathBuf {
    match sweep_value {
        Some(t) => Path::new(&sweep_label(t)).join(match_file_name(pair_id)),
        None => PathBuf::from(match_file_name(pair_id)),
    }
}

#[derive(Clone, Debug)]
pub struct MatchDir {
    pub dir: PathBuf,
}

impl MatchDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl MatchProvider for MatchDir {
    fn matches(
        &self,
        seq: &SequenceRecord,
        target_index: usize,
        sweep_value: Option<f64>,
    ) -> Result<ScoredMatchFile, EvalError> {
        let id = pair_id(&seq.name, target_index);
        let mut path = self.dir.join(match_file_relpath(&id, sweep_value));
        if !path.exists() {
            let json = path.with_extension("json");
            if json.exists() {
                path = json;
            } else {
                return Err(EvalError::MissingFeatures { pair: id, path });
            }
        }
        load_scored_matches(&path).map_err(|source| EvalError::Load { pair: id, source })
    }
}

/// Scored matches keyed by [`match_file_relpath`] rendered as a string.
#[derive(Clone, Debug, Default)]
pub struct MemoryMatches(pub HashMap<String, ScoredMatchFile>);

impl MemoryMatches {
    pub fn key(pair_id: &str, sweep_value: Option<f64>) -> String {
        match_file_relpath(pair_id, sweep_value).to_string_lossy().into_owned()
    }
}

impl MatchProvider for MemoryMatches {
    fn matches(
        &self,
        seq: &SequenceRecord,
        target_index: usize,
        sweep_value: Option<f64>,
    ) -> Result<ScoredMatchFile, EvalError> {
        let id = pair_id(&seq.name, target_index);
        let key = Self::key(&id, sweep_value);
        self.0.get(&key).cloned().ok_or(EvalError::MissingFeatures {
            pair: id,
            path: PathBuf::from(key),
        })
    }
}

#[derive(Clone, Copy)]
pub enum Source<'a> {
    Features(&'a dyn FeatureProvider),
    Matches(&'a dyn MatchProvider),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub grid: PixelThresholdGrid,
    /// `seed` is ignored; each pair uses `master_seed ^ pair_ordinal`.
    pub ransac: RansacConfig,
    pub master_seed: u64,
    pub aggregation: Aggregation,
    pub ratio_mode: RatioMode,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            grid: PixelThresholdGrid::default(),
            ransac: RansacConfig::default(),
            master_seed: 0,
            aggregation: Aggregation::PerPair,
            ratio_mode: RatioMode::Bidirectional,
        }
    }
}

/// Threshold-independent inputs of one pair.
enum PairInputs {
    /// Mutual nearest neighbors with both ratios.
    Candidates(Vec<(Correspondence, f64, f64)>),
    Scored(ScoredMatchFile),
    /// Loaded separately for every sweep value.
    PerSweepValue,
}

struct PreparedPair {
    id: String,
    ordinal: usize,
    seq: usize,
    target_index: usize,
    subset: Subset,
    gt: Homography,
    ref_size: (u32, u32),
    inputs: PairInputs,
}

struct Prepared {
    pairs: Vec<PreparedPair>,
    mean_features: Option<f64>,
}

fn check_pairing(kind: MethodKind, source: &Source<'_>) -> Result<(), EvalError> {
    let ok = matches!(
        (kind, source),
        (MethodKind::RatioTest, Source::Features(_))
            | (MethodKind::ConfidenceFilter, Source::Matches(_))
            | (MethodKind::DfmSchedule, Source::Matches(_))
    );
    if ok {
        Ok(())
    } else {
        Err(EvalError::InvalidConfig(format!(
            "method kind {kind:?} needs {} input",
            if kind == MethodKind::RatioTest { "feature" } else { "scored-match" }
        )))
    }
}

fn metric_for(a: &FeatureSet, b: &FeatureSet) -> Result<Metric, EvalError> {
    let (ka, kb) = (a.descriptors.kind(), b.descriptors.kind());
    if ka != kb {
        return Err(EvalError::InvalidConfig(format!(
            "{} has {ka:?} descriptors but {} has {kb:?}",
            a.image_id, b.image_id
        )));
    }
    Ok(Metric::for_kind(ka))
}

fn prepare(dataset: &Dataset, source: Source<'_>, kind: MethodKind) -> Result<Prepared, EvalError> {
    let mut ordinals = Vec::with_capacity(dataset.sequences.len());
    let mut next = 0;
    for seq in &dataset.sequences {
        ordinals.push(next);
        next += seq.target_count();
    }

    let per_seq: Vec<(Vec<PreparedPair>, usize, usize)> = dataset
        .sequences
        .par_iter()
        .enumerate()
        .map(|(si, seq)| -> Result<_, EvalError> {
            let ref_size = seq.images[0].dimensions()?;
            let targets: Vec<usize> = (2..=seq.target_count() + 1).collect();
            let (inputs, kp_total, images) = match source {
                Source::Features(p) => {
                    let feats: Vec<Arc<FeatureSet>> = (1..=seq.images.len())
                        .into_par_iter()
                        .map(|i| p.features(seq, i))
                        .collect::<Result<_, _>>()?;
                    let kp_total = feats.iter().map(|f| f.len()).sum::<usize>();
                    let inputs = targets
                        .par_iter()
                        .map(|&k| {
                            let (a, b) = (&feats[0], &feats[k - 1]);
                            let metric = metric_for(a, b)?;
                            let cands = mutual_candidates(&a.descriptors, &b.descriptors, metric)?;
                            let corrs = to_correspondences(&cands, &a.keypoints, &b.keypoints);
                            Ok(PairInputs::Candidates(
                                corrs
                                    .into_iter()
                                    .zip(&cands)
                                    .map(|(c, m)| (c, m.ratio_a, m.ratio_b))
                                    .collect(),
                            ))
                        })
                        .collect::<Result<Vec<_>, EvalError>>()?;
                    (inputs, kp_total, feats.len())
                }
                Source::Matches(p) => {
                    let inputs = targets
                        .iter()
                        .map(|&k| match kind {
                            MethodKind::DfmSchedule => Ok(PairInputs::PerSweepValue),
                            _ => p.matches(seq, k, None).map(PairInputs::Scored),
                        })
                        .collect::<Result<Vec<_>, EvalError>>()?;
                    (inputs, 0, 0)
                }
            };
            log::info!("prepared {} ({} pairs)", seq.name, targets.len());
            let pairs = targets
                .iter()
                .zip(inputs)
                .enumerate()
                .map(|(j, (&k, inputs))| PreparedPair {
                    id: pair_id(&seq.name, k),
                    ordinal: ordinals[si] + j,
                    seq: si,
                    target_index: k,
                    subset: seq.subset,
                    gt: seq.gt_homographies[k - 2],
                    ref_size,
                    inputs,
                })
                .collect();
            Ok((pairs, kp_total, images))
        })
        .collect::<Result<_, _>>()?;

    let mut pairs = Vec::with_capacity(next);
    let (mut kp_total, mut images) = (0usize, 0usize);
    for (p, k, i) in per_seq {
        pairs.extend(p);
        kp_total += k;
        images += i;
    }
    let mean_features = match source {
        Source::Features(_) if images > 0 => Some(kp_total as f64 / images as f64),
        _ => None,
    };
    Ok(Prepared { pairs, mean_features })
}

fn evaluate_prepared(
    dataset: &Dataset,
    source: Source<'_>,
    pair: &PreparedPair,
    assignment: ThresholdAssignment,
    t: f64,
    opts: &SweepOptions,
) -> Result<PairResult, EvalError> {
    let corrs: Vec<Correspondence> = match (&pair.inputs, assignment) {
        (PairInputs::Candidates(c), ThresholdAssignment::Ratio(r)) => c
            .iter()
            .filter(|(_, ra, rb)| {
                *ra <= r && (opts.ratio_mode == RatioMode::Unidirectional || *rb <= r)
            })
            .map(|(c, _, _)| *c)
            .collect(),
        (PairInputs::Scored(m), ThresholdAssignment::ConfidenceCutoff(_)) => filter_scored_matches(m, t),
        (PairInputs::PerSweepValue, ThresholdAssignment::LayerSchedule(_)) => {
            let Source::Matches(p) = source else {
                unreachable!("pairing checked")
            };
            let m = p.matches(&dataset.sequences[pair.seq], pair.target_index, Some(t))?;
            filter_scored_matches(&m, 1.0)
        }
        _ => unreachable!("pairing checked"),
    };
    let cfg = opts.ransac.with_seed(opts.master_seed ^ pair.ordinal as u64);
    let (estimate, hea_error) = estimate_and_score(&corrs, &pair.gt, pair.ref_size, &cfg);
    Ok(PairResult {
        pair_id: pair.id.clone(),
        subset: pair.subset,
        n_matches: corrs.len(),
        mma: mma_for_pair(&corrs, &pair.gt, &opts.grid),
        hea_error,
        estimate,
    })
}

/// Sweep result plus every per-pair result, indexed like `entries`.
#[derive(Clone, Debug)]
pub struct DetailedSweep {
    pub result: SweepResult,
    pub pairs: Vec<Vec<PairResult>>,
}

/// Evaluates every pair of `dataset` at each sweep value. Pairs run on the
/// current rayon pool; results are reduced in dataset order, so the output is
/// independent of the pool size.
pub fn run_sweep(
    dataset: &Dataset,
    source: Source<'_>,
    kind: MethodKind,
    method: &str,
    sweep_values: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult, EvalError> {
    run_sweep_detailed(dataset, source, kind, method, sweep_values, opts).map(|d| d.result)
}

pub fn run_sweep_detailed(
    dataset: &Dataset,
    source: Source<'_>,
    kind: MethodKind,
    method: &str,
    sweep_values: &[f64],
    opts: &SweepOptions,
) -> Result<DetailedSweep, EvalError> {
    if sweep_values.is_empty() {
        return Err(EvalError::InvalidConfig("no sweep values".into()));
    }
    for &t in sweep_values {
        check_sweep_value(t)?;
    }
    opts.ransac.validate().map_err(EvalError::InvalidConfig)?;
    check_pairing(kind, &source)?;
    if dataset.sequences.is_empty() {
        return Err(EvalError::EmptyResults);
    }

    let prepared = prepare(dataset, source, kind)?;
    let mut entries = Vec::with_capacity(sweep_values.len());
    let mut all_pairs = Vec::with_capacity(sweep_values.len());
    for &t in sweep_values {
        let assignment = effective_thresholds(kind, t)?;
        let results: Vec<PairResult> = prepared
            .pairs
            .par_iter()
            .map(|p| evaluate_prepared(dataset, source, p, assignment, t, opts))
            .collect::<Result<_, _>>()?;
        let curves = aggregate_with(&results, &opts.grid, opts.aggregation)?;
        let mean_matches =
            results.iter().map(|r| r.n_matches as f64).sum::<f64>() / results.len() as f64;
        log::info!("{method} t={t}: mean matches {mean_matches:.1}");
        entries.push(SweepEntry {
            sweep_value: t,
            curves,
            mean_matches,
            mean_features: prepared.mean_features,
        });
        all_pairs.push(results);
    }
    let result = SweepResult {
        method: method.to_string(),
        grid: opts.grid.clone(),
        entries,
    };
    check_invariants(&result, kind).map_err(EvalError::InvariantViolation)?;
    Ok(DetailedSweep { result, pairs: all_pairs })
}

/// Single-value sweep.
pub fn evaluate(
    dataset: &Dataset,
    source: Source<'_>,
    kind: MethodKind,
    method: &str,
    t: f64,
    opts: &SweepOptions,
) -> Result<SweepResult, EvalError> {
    run_sweep(dataset, source, kind, method, &[t], opts)
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

/// Curve values in [0,1] and non-decreasing in the pixel threshold; match
/// counts non-decreasing in the sweep value for filter-relaxation methods.
pub fn check_invariants(s: &SweepResult, kind: MethodKind) -> Result<(), String> {
    for e in &s.entries {
        for c in &e.curves {
            if c.values.len() != s.grid.len() {
                return Err(format!(
                    "{} {} curve at t={} has {} values for a {}-point grid",
                    c.metric,
                    c.scope.as_str(),
                    e.sweep_value,
                    c.values.len(),
                    s.grid.len()
                ));
            }
            if !c.values.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(format!("{} {} curve at t={} leaves [0,1]", c.metric, c.scope.as_str(), e.sweep_value));
            }
            if !non_decreasing(&c.values) {
                return Err(format!(
                    "{} {} curve at t={} decreases along the grid",
                    c.metric,
                    c.scope.as_str(),
                    e.sweep_value
                ));
            }
        }
    }
    if kind != MethodKind::DfmSchedule {
        let ascending = s.entries.windows(2).all(|w| w[0].sweep_value < w[1].sweep_value);
        if ascending && !s.entries.windows(2).all(|w| w[0].mean_matches <= w[1].mean_matches) {
            return Err("mean match count decreases as the threshold relaxes".into());
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    AtEps(f64),
    Auc,
}

/// Best `(sweep value, score)` for the overall-scope curve of `metric`; ties
/// go to the smaller sweep value.
pub fn best_threshold(s: &SweepResult, metric: MetricKind, criterion: Criterion) -> Option<(f64, f64)> {
    best_threshold_in(s, metric, Scope::Overall, criterion)
}

pub fn best_threshold_in(
    s: &SweepResult,
    metric: MetricKind,
    scope: Scope,
    criterion: Criterion,
) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for e in &s.entries {
        let Some(c) = e.curve(metric, scope) else { continue };
        let score = match criterion {
            Criterion::Auc => c.auc(),
            Criterion::AtEps(eps) => match c.at(&s.grid, eps) {
                Some(v) => v,
                None => continue,
            },
        };
        let better = match best {
            None => true,
            Some((bt, bs)) => score > bs || (score == bs && e.sweep_value < bt),
        };
        if better {
            best = Some((e.sweep_value, score));
        }
    }
    best
}

/// Parses `start:stop:step` into an ascending list within [0.1, 1.0].
pub fn sweep_values_from_spec(spec: &str) -> Result<Vec<f64>, EvalError> {
    let bad = |why: &str| EvalError::InvalidConfig(format!("sweep spec {spec:?}: {why}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(bad("expected start:stop:step"));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
    if !(step > 0.0 && step.is_finite()) {
        return Err(bad("step must be positive"));
    }
    if start > stop {
        return Err(bad("start exceeds stop"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let values: Vec<f64> = (0..count)
        .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
        .collect();
    for &v in &values {
        check_sweep_value(v).map_err(|_| bad("values must lie in [0.1, 1.0]"))?;
    }
    Ok(values)
}
