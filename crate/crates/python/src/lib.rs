//! Python bindings: feature files, the matcher, homography estimation and
//! whole-dataset sweeps. Sweep results cross the boundary as JSON text in the
//! same schema the command-line tool writes.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use matchbench::dataset::{generate_synthetic_sequence, load_dataset, textured_image, Dataset, ExclusionList};
use matchbench::eval::{
    self, run_sweep, sweep_values_from_spec, ExtractorFeatures, FeatureDir, MatchDir, Source, SweepOptions,
};
use matchbench::extractor::{Extractor, FastConfig, DEFAULT_PATTERN_SEED};
use matchbench::feature_io::{self, DescriptorMatrix, FeatureSet, Keypoint, Metric};
use matchbench::geometry::{self, Correspondence, Homography, Point2, RansacConfig};
use matchbench::image::GrayImage;
use matchbench::matching::{self, MethodKind, RatioMode, ThresholdAssignment};
use matchbench::report;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

pub fn parse_method(name: &str) -> Result<MethodKind, String> {
    match name {
        "ratio" | "ratio_test" => Ok(MethodKind::RatioTest),
        "confidence" | "confidence_filter" => Ok(MethodKind::ConfidenceFilter),
        "dfm" | "dfm_schedule" => Ok(MethodKind::DfmSchedule),
        other => Err(format!("unknown method {other:?} (ratio, confidence, dfm)")),
    }
}

fn to_corrs(pairs: Vec<((f64, f64), (f64, f64))>) -> Vec<Correspondence> {
    pairs
        .into_iter()
        .map(|((x1, y1), (x2, y2))| Correspondence::new(Point2::new(x1, y1), Point2::new(x2, y2)))
        .collect()
}

/// `(index_a, index_b, distance, ratio_a, ratio_b)`
type MatchTuple = (usize, usize, f64, f64, f64);

fn rows(h: &Homography) -> [[f64; 3]; 3] {
    let e = h.entries();
    [[e[0], e[1], e[2]], [e[3], e[4], e[5]], [e[6], e[7], e[8]]]
}

/// Keypoints and descriptors for one image.
#[pyclass(name = "FeatureSet", module = "pymatchbench", skip_from_py_object)]
#[derive(Clone)]
pub struct PyFeatureSet {
    inner: FeatureSet,
}

#[pymethods]
impl PyFeatureSet {
    /// Binary descriptors: one `bytes` row per keypoint, `bits` meaningful bits each.
    #[staticmethod]
    #[pyo3(signature = (image_id, image_size, keypoints, rows, bits))]
    fn binary(
        image_id: String,
        image_size: (u32, u32),
        keypoints: Vec<(f32, f32)>,
        rows: Vec<Vec<u8>>,
        bits: usize,
    ) -> PyResult<Self> {
        let data = rows.concat();
        Self::build(image_id, image_size, keypoints, DescriptorMatrix::PackedBinary { dim: bits, data })
    }

    /// Float descriptors: one list of floats per keypoint.
    #[staticmethod]
    fn float(image_id: String, image_size: (u32, u32), keypoints: Vec<(f32, f32)>, rows: Vec<Vec<f32>>) -> PyResult<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(value_err("descriptor rows differ in length"));
        }
        let data = rows.concat();
        Self::build(image_id, image_size, keypoints, DescriptorMatrix::Float32 { dim, data })
    }

    /// Reads a binary feature file, or its JSON mirror for `.json` paths.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        feature_io::load_features(&path)
            .map(|inner| Self { inner })
            .map_err(io_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        feature_io::save_features(&self.inner, &path).map_err(io_err)
    }

    #[getter]
    fn image_id(&self) -> String {
        self.inner.image_id.clone()
    }

    #[getter]
    fn image_size(&self) -> (u32, u32) {
        self.inner.image_size
    }

    #[getter]
    fn descriptor_dim(&self) -> usize {
        self.inner.descriptors.dim()
    }

    #[getter]
    fn is_binary(&self) -> bool {
        matches!(self.inner.descriptors, DescriptorMatrix::PackedBinary { .. })
    }

    /// `(x, y, scale, angle, score)` per keypoint.
    fn keypoints(&self) -> Vec<(f32, f32, f32, f32, f32)> {
        self.inner
            .keypoints
            .iter()
            .map(|k| (k.x, k.y, k.scale, k.angle, k.score))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "FeatureSet(image_id={:?}, keypoints={}, dim={})",
            self.inner.image_id,
            self.inner.len(),
            self.inner.descriptors.dim()
        )
    }
}

impl PyFeatureSet {
    fn build(image_id: String, image_size: (u32, u32), kps: Vec<(f32, f32)>, descriptors: DescriptorMatrix) -> PyResult<Self> {
        let inner = FeatureSet {
            image_id,
            image_size,
            keypoints: kps.into_iter().map(|(x, y)| Keypoint::at(x, y)).collect(),
            descriptors,
        };
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }
}

/// FAST corners with steered BRIEF descriptors.
#[pyclass(name = "Extractor", module = "pymatchbench")]
pub struct PyExtractor {
    inner: Extractor,
}

#[pymethods]
impl PyExtractor {
    #[new]
    #[pyo3(signature = (fast_threshold=20, arc_length=9, nms_radius=3, max_keypoints=2000, pattern_seed=DEFAULT_PATTERN_SEED))]
    fn new(fast_threshold: u8, arc_length: usize, nms_radius: u32, max_keypoints: usize, pattern_seed: u64) -> PyResult<Self> {
        let cfg = FastConfig {
            intensity_threshold: fast_threshold,
            arc_length,
            nms_radius,
            max_keypoints,
            ..FastConfig::default()
        };
        Extractor::new(cfg, pattern_seed)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    /// Extracts from an image file, converted to 8-bit grayscale.
    #[pyo3(signature = (path, image_id=None))]
    fn extract_file(&self, path: PathBuf, image_id: Option<String>) -> PyResult<PyFeatureSet> {
        let img = GrayImage::open(&path).map_err(io_err)?;
        let id = image_id.unwrap_or_else(|| path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()));
        self.run(&img, &id)
    }

    /// Extracts from row-major 8-bit grayscale pixels.
    fn extract_gray(&self, width: u32, height: u32, pixels: Vec<u8>, image_id: &str) -> PyResult<PyFeatureSet> {
        let img = GrayImage::new(width, height, pixels).map_err(value_err)?;
        self.run(&img, image_id)
    }
}

impl PyExtractor {
    fn run(&self, img: &GrayImage, id: &str) -> PyResult<PyFeatureSet> {
        self.inner
            .extract(img, id)
            .map(|inner| PyFeatureSet { inner })
            .map_err(value_err)
    }
}

/// Mutual nearest neighbours with a ratio test at `ratio`. Returns
/// `(index_a, index_b, distance, ratio_a, ratio_b)` tuples.
#[pyfunction]
#[pyo3(signature = (a, b, ratio, bidirectional=true))]
fn match_features(
    a: &PyFeatureSet,
    b: &PyFeatureSet,
    ratio: f64,
    bidirectional: bool,
) -> PyResult<Vec<MatchTuple>> {
    let kind = a.inner.descriptors.kind();
    if kind != b.inner.descriptors.kind() {
        return Err(value_err("descriptor kinds differ"));
    }
    let mode = if bidirectional { RatioMode::Bidirectional } else { RatioMode::Unidirectional };
    let m = matching::match_with_mode(&a.inner, &b.inner, ratio, Metric::for_kind(kind), mode).map_err(value_err)?;
    Ok(m
        .matches
        .iter()
        .map(|x| (x.index_a, x.index_b, x.dist, x.ratio_a, x.ratio_b))
        .collect())
}

/// The concrete threshold(s) a method uses for sweep value `t`: a single
/// float for ratio and confidence, five layer ratios for dfm.
#[pyfunction]
fn effective_thresholds(method: &str, t: f64) -> PyResult<Vec<f64>> {
    let kind = parse_method(method).map_err(value_err)?;
    Ok(match matching::effective_thresholds(kind, t).map_err(value_err)? {
        ThresholdAssignment::Ratio(r) | ThresholdAssignment::ConfidenceCutoff(r) => vec![r],
        ThresholdAssignment::LayerSchedule(l) => l.to_vec(),
    })
}

/// Least-squares homography from `((x, y), (x', y'))` pairs.
#[pyfunction]
fn dlt_homography(pairs: Vec<((f64, f64), (f64, f64))>) -> PyResult<[[f64; 3]; 3]> {
    geometry::dlt_homography(&to_corrs(pairs)).map(|h| rows(&h)).map_err(value_err)
}

/// RANSAC homography; returns the matrix and the inlier mask.
#[pyfunction]
#[pyo3(signature = (pairs, reproj_threshold=3.0, max_iters=5000, confidence=0.9999, seed=0))]
fn ransac_homography(
    pairs: Vec<((f64, f64), (f64, f64))>,
    reproj_threshold: f64,
    max_iters: usize,
    confidence: f64,
    seed: u64,
) -> PyResult<([[f64; 3]; 3], Vec<bool>)> {
    let cfg = RansacConfig {
        reproj_threshold,
        max_iters,
        confidence,
        seed,
    };
    cfg.validate().map_err(value_err)?;
    let r = geometry::ransac_homography(&to_corrs(pairs), &cfg).map_err(value_err)?;
    Ok((rows(&r.homography), r.inlier_mask))
}

/// Mean distance between reference-image corners mapped by `est` and by `gt`.
#[pyfunction]
fn corner_error(est: [f64; 9], gt: [f64; 9], width: u32, height: u32) -> PyResult<f64> {
    let est = Homography::new(est).map_err(value_err)?;
    let gt = Homography::new(gt).map_err(value_err)?;
    Ok(geometry::corner_transfer_error(&est, &gt, (width, height)))
}

/// Normalized area under a curve sampled on a uniform grid.
#[pyfunction]
fn auc(values: Vec<f64>) -> f64 {
    eval::auc(&values)
}

/// Expands a `start:stop:step` sweep spec.
#[pyfunction]
fn sweep_values(spec: &str) -> PyResult<Vec<f64>> {
    sweep_values_from_spec(spec).map_err(value_err)
}

/// Writes a synthetic viewpoint dataset with 5 targets per sequence.
#[pyfunction]
#[pyo3(signature = (root, sequences=2, seed=1, warp=20.0, width=256, height=256))]
fn write_synthetic_dataset(root: PathBuf, sequences: u64, seed: u64, warp: f64, width: u32, height: u32) -> PyResult<usize> {
    let seqs = (seed..seed + sequences)
        .map(|s| generate_synthetic_sequence(&textured_image(width, height, s), s, 5, warp))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let d = Dataset::from_sequences(seqs);
    d.write_layout(&root).map_err(io_err)?;
    Ok(d.pair_count())
}

/// Runs a sweep over a dataset on disk and returns the result as JSON.
///
/// `source` is `"builtin"`, `"features:<dir>"` or `"matches:<dir>"`.
#[pyfunction]
#[pyo3(signature = (dataset, source, method="ratio", sweep="0.1:1.0:0.1", name="method", seed=0, exclusions=true, grid=None))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    dataset: PathBuf,
    source: &str,
    method: &str,
    sweep: &str,
    name: &str,
    seed: u64,
    exclusions: bool,
    grid: Option<Vec<f64>>,
) -> PyResult<String> {
    let kind = parse_method(method).map_err(value_err)?;
    let values = sweep_values_from_spec(sweep).map_err(value_err)?;
    let mut opts = SweepOptions {
        master_seed: seed,
        ..SweepOptions::default()
    };
    if let Some(g) = grid {
        opts.grid = eval::PixelThresholdGrid::new(g).map_err(value_err)?;
    }
    let ex = if exclusions { ExclusionList::default() } else { ExclusionList::none() };
    py.detach(|| {
        let d = load_dataset(&dataset, &ex).map_err(io_err)?;
        let result = match source.split_once(':') {
            None if source == "builtin" => {
                let p = ExtractorFeatures {
                    extractor: Extractor::new(FastConfig::default(), DEFAULT_PATTERN_SEED).map_err(value_err)?,
                };
                run_sweep(&d, Source::Features(&p), kind, name, &values, &opts)
            }
            Some(("features", dir)) => run_sweep(&d, Source::Features(&FeatureDir::new(dir)), kind, name, &values, &opts),
            Some(("matches", dir)) => run_sweep(&d, Source::Matches(&MatchDir::new(dir)), kind, name, &values, &opts),
            _ => return Err(value_err(format!("bad source {source:?}"))),
        }
        .map_err(value_err)?;
        report::to_json(&result).map_err(value_err)
    })
}

/// Renders a JSON sweep result as the text table.
#[pyfunction]
fn report_table(json: &str) -> PyResult<String> {
    report::from_json(json).map(|s| report::table(&s)).map_err(value_err)
}

#[pymodule]
fn pymatchbench(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureSet>()?;
    m.add_class::<PyExtractor>()?;
    m.add_function(wrap_pyfunction!(match_features, m)?)?;
    m.add_function(wrap_pyfunction!(effective_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(dlt_homography, m)?)?;
    m.add_function(wrap_pyfunction!(ransac_homography, m)?)?;
    m.add_function(wrap_pyfunction!(corner_error, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_values, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(report_table, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        assert_eq!(parse_method("ratio"), Ok(MethodKind::RatioTest));
        assert_eq!(parse_method("dfm_schedule"), Ok(MethodKind::DfmSchedule));
        assert!(parse_method("magsac").is_err());
    }

    #[test]
    fn homography_rows() {
        let h = Homography::translation(2.0, -1.0);
        assert_eq!(rows(&h), [[1.0, 0.0, 2.0], [0.0, 1.0, -1.0], [0.0, 0.0, 1.0]]);
        let c = to_corrs(vec![((1.0, 2.0), (3.0, 4.0))]);
        assert_eq!(c[0].q, Point2::new(3.0, 4.0));
    }
}
