//! Threshold-sweep evaluation of local feature matchers on HPatches-style
//! homography datasets.
//!
//! Pipeline: [`dataset`] loads sequences, features come from files or the
//! built-in [`extractor`], [`matching`] pairs descriptors, [`geometry`]
//! estimates homographies, and [`eval`] scores every pair over a sweep of
//! matcher thresholds. [`report`] renders the results.

// `!(x > y)` is the NaN-rejecting form used for input validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod eval;
pub mod extractor;
pub mod feature_io;
pub mod geometry;
pub mod image;
pub mod matching;
pub mod report;
pub mod rng;

pub use dataset::{
    generate_synthetic_sequence, iterate_pairs, load_dataset, textured_image, Dataset, DatasetError,
    ExclusionList, ImagePair, ImageSource, SequenceRecord, Subset,
};
pub use eval::{
    aggregate, auc, best_threshold, evaluate, hea_for_pair, mma_for_pair, run_sweep,
    sweep_values_from_spec, Criterion, Curve, EvalError, FeatureDir, MatchDir, MetricKind,
    PairResult, PixelThresholdGrid, Scope, Source, SweepOptions, SweepResult,
};
pub use extractor::{Extractor, FastConfig};
pub use feature_io::{
    load_features, load_scored_matches, save_features, save_scored_matches, DescriptorKind,
    DescriptorMatrix, FeatureIoError, FeatureSet, Keypoint, Metric, ScoredMatch, ScoredMatchFile,
};
pub use geometry::{
    corner_transfer_error, dlt_homography, ransac_homography, Correspondence, GeometryError,
    Homography, Point2, RansacConfig, RansacResult,
};
pub use image::GrayImage;
pub use matching::{effective_thresholds, match_mnns_brt, Match, MatchSet, MethodKind, ThresholdAssignment};
pub use report::{emit_report, ReportFormat};
