//! Run configuration shared by `evaluate` and `sweep`. Every flag has a JSON
//! key of the same name (dashes become underscores); values from
//! `--config file.json` fill in whatever the command line leaves unset.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use matchbench::eval::{Aggregation, PixelThresholdGrid, SweepOptions};
use matchbench::extractor::{FastConfig, DEFAULT_PATTERN_SEED};
use matchbench::geometry::RansacConfig;
use matchbench::matching::{MethodKind, RatioMode};

use crate::CliError;

pub const DEFAULT_SWEEP: &str = "0.1:1.0:0.1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    /// Ratio-test threshold on descriptor matches.
    Ratio,
    /// One minus a confidence cutoff on scored matches.
    Confidence,
    /// DFM layer schedule; reads `<matches>/<t>/` per sweep value.
    Dfm,
}

impl From<MethodArg> for MethodKind {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ratio => MethodKind::RatioTest,
            MethodArg::Confidence => MethodKind::ConfidenceFilter,
            MethodArg::Dfm => MethodKind::DfmSchedule,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationArg {
    PerPair,
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioModeArg {
    Bidirectional,
    Unidirectional,
}

/// Dataset and extractor flags shared by every dataset-reading command.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetArgs {
    /// Dataset root holding one directory per sequence.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Exclusion list file (one sequence name per line).
    #[arg(long)]
    pub exclusions: Option<PathBuf>,
    /// Evaluate every sequence, ignoring the default exclusion list.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_exclusions: Option<bool>,
    /// FAST intensity threshold for the built-in extractor.
    #[arg(long)]
    pub fast_threshold: Option<u8>,
    /// FAST contiguous arc length.
    #[arg(long)]
    pub arc_length: Option<usize>,
    /// Non-maximum suppression radius in px.
    #[arg(long)]
    pub nms_radius: Option<u32>,
    /// Keypoint cap per image.
    #[arg(long)]
    pub max_keypoints: Option<usize>,
    /// Seed of the BRIEF sampling pattern.
    #[arg(long)]
    pub pattern_seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl DatasetArgs {
    fn or(self, o: DatasetArgs) -> DatasetArgs {
        DatasetArgs {
            dataset: self.dataset.or(o.dataset),
            exclusions: self.exclusions.or(o.exclusions),
            no_exclusions: self.no_exclusions.or(o.no_exclusions),
            fast_threshold: self.fast_threshold.or(o.fast_threshold),
            arc_length: self.arc_length.or(o.arc_length),
            nms_radius: self.nms_radius.or(o.nms_radius),
            max_keypoints: self.max_keypoints.or(o.max_keypoints),
            pattern_seed: self.pattern_seed.or(o.pattern_seed),
            jobs: self.jobs.or(o.jobs),
        }
    }

    fn fill_defaults(&mut self) {
        let f = FastConfig::default();
        self.no_exclusions.get_or_insert(false);
        self.fast_threshold.get_or_insert(f.intensity_threshold);
        self.arc_length.get_or_insert(f.arc_length);
        self.nms_radius.get_or_insert(f.nms_radius);
        self.max_keypoints.get_or_insert(f.max_keypoints);
        self.pattern_seed.get_or_insert(DEFAULT_PATTERN_SEED);
    }

    pub fn fast_config(&self) -> FastConfig {
        let d = FastConfig::default();
        FastConfig {
            intensity_threshold: self.fast_threshold.unwrap_or(d.intensity_threshold),
            arc_length: self.arc_length.unwrap_or(d.arc_length),
            nms_radius: self.nms_radius.unwrap_or(d.nms_radius),
            border: d.border,
            max_keypoints: self.max_keypoints.unwrap_or(d.max_keypoints),
        }
    }

    pub fn dataset_root(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("--dataset is required".into()))
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DatasetArgs,
    /// Directory of per-image feature files (`<seq>_<k>.feat` or `.json`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Directory of per-pair scored match files (`<seq>_1_<k>.mtch`).
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Run the built-in FAST + steered BRIEF extractor.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub builtin: Option<bool>,
    /// How the sweep value is applied.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Method label used in reports.
    #[arg(long)]
    pub name: Option<String>,
    /// Pixel thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// RANSAC inlier threshold in px.
    #[arg(long)]
    pub reproj_threshold: Option<f64>,
    /// RANSAC iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// RANSAC confidence for adaptive termination.
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Master seed; pair i uses seed ^ i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for reports and the echoed config.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// MMA aggregation over pairs.
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    /// Ratio test in both directions or only reference to target.
    #[arg(long, value_enum)]
    pub ratio_mode: Option<RatioModeArg>,
    /// Single sweep value (evaluate only).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Sweep values as start:stop:step (sweep only).
    #[arg(long)]
    pub sweep: Option<String>,
    /// JSON file with defaults for any of the flags above.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub enum SourceMode {
    Builtin,
    Features(PathBuf),
    Matches(PathBuf),
}

impl RunArgs {
    /// Flags win over config file values.
    pub fn merged(self) -> Result<RunArgs, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: RunArgs = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        Ok(self.or(file))
    }

    fn or(self, o: RunArgs) -> RunArgs {
        RunArgs {
            data: self.data.or(o.data),
            features: self.features.or(o.features),
            matches: self.matches.or(o.matches),
            builtin: self.builtin.or(o.builtin),
            method: self.method.or(o.method),
            name: self.name.or(o.name),
            grid: self.grid.or(o.grid),
            reproj_threshold: self.reproj_threshold.or(o.reproj_threshold),
            max_iters: self.max_iters.or(o.max_iters),
            confidence: self.confidence.or(o.confidence),
            seed: self.seed.or(o.seed),
            output: self.output.or(o.output),
            aggregation: self.aggregation.or(o.aggregation),
            ratio_mode: self.ratio_mode.or(o.ratio_mode),
            threshold: self.threshold.or(o.threshold),
            sweep: self.sweep.or(o.sweep),
            config: self.config,
        }
    }

    /// The effective configuration with every default spelled out, as
    /// written to `config.json`.
    pub fn with_defaults(&self) -> RunArgs {
        let mut r = self.clone();
        let ransac = RansacConfig::default();
        r.data.fill_defaults();
        r.method.get_or_insert(match (&r.features, &r.matches) {
            (None, Some(_)) => MethodArg::Confidence,
            _ => MethodArg::Ratio,
        });
        if r.name.is_none() {
            r.name = Some(match (r.builtin, &r.features, &r.matches) {
                (Some(true), _, _) => "builtin".into(),
                (_, Some(p), _) | (_, None, Some(p)) => p
                    .file_name()
                    .map_or_else(|| "method".into(), |n| n.to_string_lossy().into_owned()),
                _ => "builtin".into(),
            });
        }
        r.grid.get_or_insert_with(|| PixelThresholdGrid::default().values().to_vec());
        r.reproj_threshold.get_or_insert(ransac.reproj_threshold);
        r.max_iters.get_or_insert(ransac.max_iters);
        r.confidence.get_or_insert(ransac.confidence);
        r.seed.get_or_insert(0);
        r.aggregation.get_or_insert(AggregationArg::PerPair);
        r.ratio_mode.get_or_insert(RatioModeArg::Bidirectional);
        r
    }

    pub fn source_mode(&self) -> Result<SourceMode, CliError> {
        let builtin = self.builtin.unwrap_or(false);
        match (builtin, &self.features, &self.matches) {
            (true, None, None) => Ok(SourceMode::Builtin),
            (false, Some(p), None) => Ok(SourceMode::Features(p.clone())),
            (false, None, Some(p)) => Ok(SourceMode::Matches(p.clone())),
            (false, None, None) => Err(CliError::Config(
                "choose an input: --builtin, --features DIR or --matches DIR".into(),
            )),
            _ => Err(CliError::Config(
                "--builtin, --features and --matches are mutually exclusive".into(),
            )),
        }
    }

    pub fn sweep_options(&self) -> Result<SweepOptions, CliError> {
        let d = RansacConfig::default();
        let ransac = RansacConfig {
            reproj_threshold: self.reproj_threshold.unwrap_or(d.reproj_threshold),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            confidence: self.confidence.unwrap_or(d.confidence),
            seed: 0,
        };
        ransac.validate().map_err(CliError::Config)?;
        let grid = match &self.grid {
            Some(g) => PixelThresholdGrid::new(g.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            None => PixelThresholdGrid::default(),
        };
        Ok(SweepOptions {
            grid,
            ransac,
            master_seed: self.seed.unwrap_or(0),
            aggregation: match self.aggregation {
                Some(AggregationArg::Pooled) => Aggregation::Pooled,
                _ => Aggregation::PerPair,
            },
            ratio_mode: match self.ratio_mode {
                Some(RatioModeArg::Unidirectional) => RatioMode::Unidirectional,
                _ => RatioMode::Bidirectional,
            },
        })
    }
}
