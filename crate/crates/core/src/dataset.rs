//! HPatches-style sequence datasets.
//!
//! A sequence directory holds a reference image `1.*`, target images
//! `2.*`..`6.*` (ppm, png or jpg) and ground-truth files `H_1_2`..`H_1_6`,
//! each nine whitespace-separated numbers (row-major 3x3) mapping reference
//! pixels to target pixels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dlt_homography, Correspondence, GeometryError, Homography, Point2};
use crate::image::{GrayImage, ImageError};
use crate::rng::Lcg;

/// Images per on-disk sequence: one reference plus five targets.
pub const IMAGES_PER_SEQUENCE: usize = 6;
const IMAGE_EXTENSIONS: [&str; 3] = ["ppm", "png", "jpg"];
const MAX_WARP_ATTEMPTS: usize = 100;

/// Default exclusion list: drops the oversized sequences, leaving 52
/// illumination and 56 viewpoint sequences of the 116.
pub const DEFAULT_EXCLUSIONS: &str = include_str!("../data/hpatches_exclusions.txt");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("cannot parse {path}: {message}")]
    ParseError { path: PathBuf, message: String },
    #[error("no sequences found under {0}")]
    EmptyDataset(PathBuf),
    #[error(transparent)]
    Decode(#[from] ImageError),
    #[error("sequence name {0:?} does not start with \"i_\" or \"v_\"")]
    UnknownSubset(String),
    #[error("could not sample a non-degenerate warp after {0} attempts")]
    DegenerateWarp(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid sequence {name}: {message}")]
    InvalidSequence { name: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Illumination,
    Viewpoint,
}

impl Subset {
    /// `i_*` sequences are illumination, `v_*` viewpoint.
    pub fn from_sequence_name(name: &str) -> Option<Subset> {
        if name.starts_with("i_") {
            Some(Subset::Illumination)
        } else if name.starts_with("v_") {
            Some(Subset::Viewpoint)
        } else {
            None
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Illumination => "illumination",
            Subset::Viewpoint => "viewpoint",
        })
    }
}

/// Where a sequence image lives.
#[derive(Clone, Debug)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Arc<GrayImage>),
}

impl ImageSource {
    pub fn load(&self) -> Result<Arc<GrayImage>, DatasetError> {
        match self {
            ImageSource::File(p) => Ok(Arc::new(GrayImage::open(p)?)),
            ImageSource::Memory(img) => Ok(Arc::clone(img)),
        }
    }

    /// (width, height) without decoding pixel data when possible.
    pub fn dimensions(&self) -> Result<(u32, u32), DatasetError> {
        match self {
            ImageSource::File(p) => image::image_dimensions(p).map_err(|source| {
                ImageError::Decode {
                    path: p.display().to_string(),
                    source,
                }
                .into()
            }),
            ImageSource::Memory(img) => Ok(img.size()),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ImageSource::File(p) => p.display().to_string(),
            ImageSource::Memory(_) => "<in-memory image>".into(),
        }
    }
}

/// One reference image, its targets and the reference-to-target homographies.
#[derive(Clone, Debug)]
pub struct SequenceRecord {
    pub name: String,
    pub subset: Subset,
    /// `images[0]` is the reference; `images[k]` is target image `k + 1`.
    pub images: Vec<ImageSource>,
    /// `gt_homographies[k]` maps image 1 onto image `k + 2`.
    pub gt_homographies: Vec<Homography>,
}

impl SequenceRecord {
    pub fn new(
        name: impl Into<String>,
        images: Vec<ImageSource>,
        gt_homographies: Vec<Homography>,
    ) -> Result<Self, DatasetError> {
        let name = name.into();
        let subset =
            Subset::from_sequence_name(&name).ok_or_else(|| DatasetError::UnknownSubset(name.clone()))?;
        if gt_homographies.is_empty() || images.len() != gt_homographies.len() + 1 {
            return Err(DatasetError::InvalidSequence {
                name,
                message: format!(
                    "{} images and {} homographies (need n+1 images for n >= 1 homographies)",
                    images.len(),
                    gt_homographies.len()
                ),
            });
        }
        Ok(Self {
            name,
            subset,
            images,
            gt_homographies,
        })
    }

    /// Same content under a new name (which also fixes the subset).
    pub fn renamed(self, name: impl Into<String>) -> Result<Self, DatasetError> {
        Self::new(name, self.images, self.gt_homographies)
    }

    pub fn target_count(&self) -> usize {
        self.gt_homographies.len()
    }

    /// 1-based image index as used in file names.
    pub fn image_id(&self, index: usize) -> String {
        format!("{}_{}", self.name, index)
    }
}

/// A sequence left out of evaluation, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub name: String,
    pub reason: String,
}

/// Sequence names to skip, one per line, `#` starting a comment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExclusionList {
    names: Vec<String>,
    source: String,
}

impl ExclusionList {
    pub fn none() -> Self {
        Self {
            names: Vec::new(),
            source: "none".into(),
        }
    }

    pub fn parse(text: &str, source: impl Into<String>) -> Self {
        let mut names: Vec<String> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        names.sort();
        names.dedup();
        Self {
            names,
            source: source.into(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::parse(&text, path.display().to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).is_ok()
    }
}

impl Default for ExclusionList {
    fn default() -> Self {
        Self::parse(DEFAULT_EXCLUSIONS, "default")
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub root: Option<PathBuf>,
    pub sequences: Vec<SequenceRecord>,
    pub excluded: Vec<Exclusion>,
}

impl Dataset {
    /// Builds an in-memory dataset, sorted by sequence name.
    pub fn from_sequences(mut sequences: Vec<SequenceRecord>) -> Self {
        sequences.sort_by(|a, b| a.name.cmp(&b.name));
        Self {
            root: None,
            sequences,
            excluded: Vec::new(),
        }
    }

    pub fn count(&self, subset: Subset) -> usize {
        self.sequences.iter().filter(|s| s.subset == subset).count()
    }

    pub fn pair_count(&self) -> usize {
        self.sequences.iter().map(SequenceRecord::target_count).sum()
    }

    /// Writes the dataset in the on-disk layout (PNG images, `H_1_k` text).
    pub fn write_layout(&self, root: &Path) -> Result<(), DatasetError> {
        for seq in &self.sequences {
            let dir = root.join(&seq.name);
            fs::create_dir_all(&dir).map_err(|source| DatasetError::Io {
                path: dir.clone(),
                source,
            })?;
            for (i, src) in seq.images.iter().enumerate() {
                let img = src.load()?;
                let path = dir.join(format!("{}.png", i + 1));
                img.save_png(&path).map_err(|source| {
                    DatasetError::Decode(ImageError::Decode {
                        path: path.display().to_string(),
                        source,
                    })
                })?;
            }
            for (k, h) in seq.gt_homographies.iter().enumerate() {
                let path = dir.join(format!("H_1_{}", k + 2));
                let e = h.entries();
                let text = format!(
                    "{:e} {:e} {:e}\n{:e} {:e} {:e}\n{:e} {:e} {:e}\n",
                    e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]
                );
                fs::write(&path, text).map_err(|source| DatasetError::Io { path, source })?;
            }
        }
        Ok(())
    }
}

/// Parses nine whitespace-separated numbers and renormalizes to `h33 = 1`.
pub fn parse_homography(text: &str, path: &Path) -> Result<Homography, DatasetError> {
    let parse_err = |message: String| DatasetError::ParseError {
        path: path.to_path_buf(),
        message,
    };
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    if values.len() != 9 {
        return Err(parse_err(format!("expected 9 numbers, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(parse_err("non-finite entry".into()));
    }
    if values[8].abs() < 1e-12 {
        return Err(parse_err("h33 is zero".into()));
    }
    let mut h = [0.0; 9];
    for (dst, v) in h.iter_mut().zip(&values) {
        *dst = v / values[8];
    }
    Homography::new(h).map_err(|e| parse_err(e.to_string()))
}

fn find_image(dir: &Path, index: usize) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{index}.{ext}")))
        .find(|p| p.is_file())
}

fn load_sequence(dir: &Path, name: &str) -> Result<SequenceRecord, DatasetError> {
    let mut images = Vec::with_capacity(IMAGES_PER_SEQUENCE);
    for i in 1..=IMAGES_PER_SEQUENCE {
        let path = find_image(dir, i)
            .ok_or_else(|| DatasetError::MissingFile(dir.join(format!("{i}.{{ppm,png,jpg}}"))))?;
        images.push(ImageSource::File(path));
    }
    let mut gts = Vec::with_capacity(IMAGES_PER_SEQUENCE - 1);
    for k in 2..=IMAGES_PER_SEQUENCE {
        let path = dir.join(format!("H_1_{k}"));
        if !path.is_file() {
            return Err(DatasetError::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
        gts.push(parse_homography(&text, &path)?);
    }
    SequenceRecord::new(name, images, gts)
}

/// Loads every non-excluded sequence directory under `root`, sorted by name.
pub fn load_dataset(root: &Path, exclusions: &ExclusionList) -> Result<Dataset, DatasetError> {
    let entries = fs::read_dir(root).map_err(|source| DatasetError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !entry.path().is_dir() {
            continue;
        }
        names.push(name);
    }
    names.sort();

    let mut sequences = Vec::new();
    let mut excluded = Vec::new();
    for name in names {
        if exclusions.contains(&name) {
            excluded.push(Exclusion {
                reason: format!("listed in exclusion list ({})", exclusions.source),
                name,
            });
            continue;
        }
        sequences.push(load_sequence(&root.join(&name), &name)?);
    }
    if sequences.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    log::info!(
        "loaded {} sequences from {} ({} excluded)",
        sequences.len(),
        root.display(),
        excluded.len()
    );
    Ok(Dataset {
        root: Some(root.to_path_buf()),
        sequences,
        excluded,
    })
}

/// A reference/target pair with decoded images.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub sequence_name: String,
    /// Always 1.
    pub ref_index: usize,
    pub target_index: usize,
    pub ref_image: Arc<GrayImage>,
    pub target_image: Arc<GrayImage>,
    pub gt: Homography,
    pub subset: Subset,
}

/// All (reference, target) pairs ordered by sequence name then target index.
pub fn iterate_pairs(d: &Dataset) -> Result<Vec<ImagePair>, DatasetError> {
    let mut pairs = Vec::with_capacity(d.pair_count());
    for seq in &d.sequences {
        let reference = seq.images[0].load()?;
        for (k, gt) in seq.gt_homographies.iter().enumerate() {
            pairs.push(ImagePair {
                sequence_name: seq.name.clone(),
                ref_index: 1,
                target_index: k + 2,
                ref_image: Arc::clone(&reference),
                target_image: seq.images[k + 1].load()?,
                gt: *gt,
                subset: seq.subset,
            });
        }
    }
    Ok(pairs)
}

/// Resamples `src` through `h` (target pixel `q` takes `src(h^-1 q)`),
/// bilinear, zero outside.
pub fn warp_image(src: &GrayImage, h: &Homography) -> Result<GrayImage, GeometryError> {
    let inv = h.inverse()?;
    Ok(GrayImage::from_fn(src.width(), src.height(), |x, y| {
        inv.apply(Point2::new(f64::from(x), f64::from(y)))
            .ok()
            .and_then(|p| src.sample_bilinear(p.x, p.y))
            .map_or(0, |v| v.round().clamp(0.0, 255.0) as u8)
    }))
}

fn corners_collinear(pts: &[Point2; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        let (a, b, c) = (pts[t[0]], pts[t[1]], pts[t[2]]);
        ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs() < 1e-6
    })
}

/// Synthetic viewpoint sequence: each target is `base` warped by a homography
/// that moves the image corners by independent uniform offsets in
/// `±warp_magnitude` px. Deterministic in `seed`; named `v_synthetic_<seed>`.
pub fn generate_synthetic_sequence(
    base: &GrayImage,
    seed: u64,
    n_targets: usize,
    warp_magnitude: f64,
) -> Result<SequenceRecord, DatasetError> {
    if n_targets == 0 {
        return Err(DatasetError::InvalidArgument("n_targets must be at least 1".into()));
    }
    if !(warp_magnitude >= 0.0 && warp_magnitude.is_finite()) {
        return Err(DatasetError::InvalidArgument(format!(
            "warp magnitude must be finite and non-negative, got {warp_magnitude}"
        )));
    }
    let mut rng = Lcg::new(seed);
    let base = Arc::new(base.clone());
    let (w, h) = (f64::from(base.width() - 1), f64::from(base.height() - 1));
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ];

    let mut images = vec![ImageSource::Memory(Arc::clone(&base))];
    let mut gts = Vec::with_capacity(n_targets);
    for _ in 0..n_targets {
        let gt = if warp_magnitude == 0.0 {
            Homography::IDENTITY
        } else {
            sample_warp(&mut rng, &corners, warp_magnitude)?
        };
        let target = if gt == Homography::IDENTITY {
            Arc::clone(&base)
        } else {
            Arc::new(warp_image(&base, &gt).map_err(|_| DatasetError::DegenerateWarp(1))?)
        };
        images.push(ImageSource::Memory(target));
        gts.push(gt);
    }
    SequenceRecord::new(format!("v_synthetic_{seed}"), images, gts)
}

fn sample_warp(rng: &mut Lcg, corners: &[Point2; 4], magnitude: f64) -> Result<Homography, DatasetError> {
    for _ in 0..MAX_WARP_ATTEMPTS {
        let moved = corners.map(|c| {
            Point2::new(
                c.x + rng.next_symmetric(magnitude),
                c.y + rng.next_symmetric(magnitude),
            )
        });
        if corners_collinear(&moved) {
            continue;
        }
        let corrs: Vec<Correspondence> = corners
            .iter()
            .zip(&moved)
            .map(|(&p, &q)| Correspondence::new(p, q))
            .collect();
        if let Ok(h) = dlt_homography(&corrs) {
            return Ok(h);
        }
    }
    Err(DatasetError::DegenerateWarp(MAX_WARP_ATTEMPTS))
}

/// Deterministic piecewise-constant test pattern: overlapping rectangles,
/// triangles and ellipses of random gray levels on a gradient background.
pub fn textured_image(width: u32, height: u32, seed: u64) -> GrayImage {
    let mut rng = Lcg::new(seed ^ 0x5eed_7e87);
    let mut buf: Vec<u8> = (0..height)
        .flat_map(|y| (0..width).map(move |x| ((x + y) * 64 / (width + height).max(1) + 96) as u8))
        .collect();
    let (wf, hf) = (f64::from(width), f64::from(height));
    let shapes = ((width as usize * height as usize) / 900).max(8);
    for s in 0..shapes {
        let value = rng.next_below(256) as u8;
        let cx = rng.next_f64() * wf;
        let cy = rng.next_f64() * hf;
        let rx = 4.0 + rng.next_f64() * 24.0;
        let ry = 4.0 + rng.next_f64() * 24.0;
        let theta = rng.next_f64() * std::f64::consts::PI;
        let tri = [
            (cx + rng.next_symmetric(30.0), cy + rng.next_symmetric(30.0)),
            (cx + rng.next_symmetric(30.0), cy + rng.next_symmetric(30.0)),
            (cx + rng.next_symmetric(30.0), cy + rng.next_symmetric(30.0)),
        ];
        let (c, sn) = (theta.cos(), theta.sin());
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (f64::from(x) - cx, f64::from(y) - cy);
                let inside = match s % 3 {
                    0 => {
                        let u = c * px + sn * py;
                        let v = -sn * px + c * py;
                        u.abs() <= rx && v.abs() <= ry
                    }
                    1 => point_in_triangle((f64::from(x), f64::from(y)), tri),
                    _ => {
                        let u = c * px + sn * py;
                        let v = -sn * px + c * py;
                        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
                    }
                };
                if inside {
                    buf[(y * width + x) as usize] = value;
                }
            }
        }
    }
    GrayImage::new(width, height, buf).expect("dimensions match buffer")
}

fn point_in_triangle(p: (f64, f64), t: [(f64, f64); 3]) -> bool {
    let sign = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        (a.0 - c.0) * (b.1 - c.1) - (b.0 - c.0) * (a.1 - c.1)
    };
    let d1 = sign(p, t[0], t[1]);
    let d2 = sign(p, t[1], t[2]);
    let d3 = sign(p, t[2], t[0]);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    const H_TEXT: &str = "1 0 2\n0 1 -1\n0 0 1\n";

    fn write_sequence(root: &Path, name: &str) {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        let img = GrayImage::from_fn(8, 6, |x, y| (x * 20 + y) as u8);
        for i in 1..=6 {
            img.save_png(&dir.join(format!("{i}.png"))).unwrap();
        }
        for k in 2..=6 {
            fs::write(dir.join(format!("H_1_{k}")), H_TEXT).unwrap();
        }
    }

    #[test]
    fn subset_from_prefix() {
        assert_eq!(Subset::from_sequence_name("i_ajuntament"), Some(Subset::Illumination));
        assert_eq!(Subset::from_sequence_name("v_wall"), Some(Subset::Viewpoint));
        assert_eq!(Subset::from_sequence_name("x_other"), None);
    }

    #[test]
    fn default_exclusions_have_five_plus_three() {
        let ex = ExclusionList::default();
        let i = ex.names().iter().filter(|n| n.starts_with("i_")).count();
        let v = ex.names().iter().filter(|n| n.starts_with("v_")).count();
        assert_eq!((i, v), (5, 3));
        assert!(ex.contains("v_talent"));
        assert!(!ex.contains("v_wall"));
    }

    #[test]
    fn exclusion_comments_and_blanks() {
        let ex = ExclusionList::parse("# header\n\n a_b  # trailing\nc\n", "t");
        assert_eq!(ex.names(), ["a_b", "c"]);
    }

    #[test]
    fn parse_homography_renormalizes() {
        let p = Path::new("H");
        let h = parse_homography("2 0 4\n0 2 -2\n0 0 2", p).unwrap();
        assert_eq!(h, Homography::translation(2.0, -1.0));
        assert!(matches!(parse_homography("1 2 3", p), Err(DatasetError::ParseError { .. })));
        assert!(matches!(
            parse_homography("1 0 0 0 1 0 0 0 nan", p),
            Err(DatasetError::ParseError { .. })
        ));
        assert!(matches!(
            parse_homography("1 0 0 0 1 0 0 0 0", p),
            Err(DatasetError::ParseError { .. })
        ));
        assert!(matches!(
            parse_homography("1 0 0 0 1 0 0 0 x", p),
            Err(DatasetError::ParseError { .. })
        ));
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &ExclusionList::none()),
            Err(DatasetError::EmptyDataset(_))
        ));
    }

    #[test]
    fn one_sequence_gives_five_pairs() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), "v_one");
        let d = load_dataset(dir.path(), &ExclusionList::none()).unwrap();
        assert_eq!(d.sequences.len(), 1);
        let pairs = iterate_pairs(&d).unwrap();
        let targets: Vec<usize> = pairs.iter().map(|p| p.target_index).collect();
        assert_eq!(targets, [2, 3, 4, 5, 6]);
        assert!(pairs.iter().all(|p| p.ref_index == 1 && p.subset == Subset::Viewpoint));
        assert_eq!(pairs[0].gt, Homography::translation(2.0, -1.0));
        assert_eq!(pairs[0].ref_image.size(), (8, 6));
    }

    #[test]
    fn missing_homography_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), "i_broken");
        fs::remove_file(dir.path().join("i_broken/H_1_4")).unwrap();
        match load_dataset(dir.path(), &ExclusionList::none()) {
            Err(DatasetError::MissingFile(p)) => assert!(p.ends_with("H_1_4")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), "i_broken");
        fs::remove_file(dir.path().join("i_broken/3.png")).unwrap();
        assert!(matches!(
            load_dataset(dir.path(), &ExclusionList::none()),
            Err(DatasetError::MissingFile(_))
        ));
    }

    #[test]
    fn corrupt_image_fails_at_decode() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(dir.path(), "v_bad");
        fs::write(dir.path().join("v_bad/2.png"), b"not a png").unwrap();
        let d = load_dataset(dir.path(), &ExclusionList::none()).unwrap();
        assert!(matches!(iterate_pairs(&d), Err(DatasetError::Decode(_))));
    }

    #[test]
    fn exclusions_split_counts() {
        // 57 illumination + 59 viewpoint names, including every default exclusion
        let dir = tempfile::tempdir().unwrap();
        let defaults = ExclusionList::default();
        let mut names: Vec<String> = defaults.names().to_vec();
        let mut i = 0;
        while names.iter().filter(|n| n.starts_with("i_")).count() < 57 {
            names.push(format!("i_seq{i:03}"));
            i += 1;
        }
        while names.iter().filter(|n| n.starts_with("v_")).count() < 59 {
            names.push(format!("v_seq{i:03}"));
            i += 1;
        }
        for n in &names {
            write_sequence(dir.path(), n);
        }
        let all = load_dataset(dir.path(), &ExclusionList::none()).unwrap();
        assert_eq!(all.sequences.len(), 116);
        let d = load_dataset(dir.path(), &defaults).unwrap();
        assert_eq!(d.count(Subset::Illumination), 52);
        assert_eq!(d.count(Subset::Viewpoint), 56);
        assert_eq!(d.excluded.len(), 8);
        assert_eq!(d.pair_count(), 540);
        assert!(d
            .sequences
            .iter()
            .all(|s| !d.excluded.iter().any(|e| e.name == s.name)));
        let sorted = d.sequences.windows(2).all(|w| w[0].name < w[1].name);
        assert!(sorted);
    }

    #[test]
    fn zero_warp_is_identity() {
        let base = textured_image(64, 48, 1);
        let seq = generate_synthetic_sequence(&base, 3, 5, 0.0).unwrap();
        assert!(seq.gt_homographies.iter().all(|h| *h == Homography::IDENTITY));
        assert_eq!(*seq.images[3].load().unwrap(), base);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let base = textured_image(96, 80, 2);
        let a = generate_synthetic_sequence(&base, 11, 5, 20.0).unwrap();
        let b = generate_synthetic_sequence(&base, 11, 5, 20.0).unwrap();
        assert_eq!(a.gt_homographies, b.gt_homographies);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(*x.load().unwrap(), *y.load().unwrap());
        }
        let c = generate_synthetic_sequence(&base, 12, 5, 20.0).unwrap();
        assert_ne!(a.gt_homographies, c.gt_homographies);
    }

    #[test]
    fn synthetic_rejects_bad_arguments() {
        let base = textured_image(32, 32, 0);
        assert!(matches!(
            generate_synthetic_sequence(&base, 0, 0, 1.0),
            Err(DatasetError::InvalidArgument(_))
        ));
        assert!(matches!(
            generate_synthetic_sequence(&base, 0, 1, -1.0),
            Err(DatasetError::InvalidArgument(_))
        ));
    }

    #[test]
    fn synthetic_gt_keeps_interior_points_inside() {
        let base = textured_image(256, 256, 7);
        let seq = generate_synthetic_sequence(&base, 7, 5, 20.0).unwrap();
        assert_eq!(seq.gt_homographies.len(), 5);
        for gt in &seq.gt_homographies {
            let mut inside = 0;
            let mut total = 0;
            for gy in (16..240).step_by(8) {
                for gx in (16..240).step_by(8) {
                    total += 1;
                    let q = gt.apply(Point2::new(f64::from(gx), f64::from(gy))).unwrap();
                    if q.x >= 0.0 && q.y >= 0.0 && q.x <= 255.0 && q.y <= 255.0 {
                        inside += 1;
                    }
                }
            }
            assert!(inside * 10 >= total * 9, "{inside}/{total}");
        }
    }

    #[test]
    fn warped_pixels_follow_the_homography() {
        let base = textured_image(128, 128, 5);
        let seq = generate_synthetic_sequence(&base, 5, 1, 10.0).unwrap();
        let target = seq.images[1].load().unwrap();
        let inv = seq.gt_homographies[0].inverse().unwrap();
        for (x, y) in [(40u32, 40u32), (64, 70), (90, 30)] {
            let p = inv.apply(Point2::new(f64::from(x), f64::from(y))).unwrap();
            let expected = base.sample_bilinear(p.x, p.y).unwrap().round() as u8;
            assert_eq!(target.get(x, y), expected);
        }
    }

    #[test]
    fn layout_round_trip() {
        let base = textured_image(48, 40, 9);
        let d = Dataset::from_sequences(vec![generate_synthetic_sequence(&base, 1, 5, 4.0).unwrap()]);
        let dir = tempfile::tempdir().unwrap();
        d.write_layout(dir.path()).unwrap();
        let back = load_dataset(dir.path(), &ExclusionList::none()).unwrap();
        assert_eq!(back.sequences[0].name, "v_synthetic_1");
        for (a, b) in back.sequences[0]
            .gt_homographies
            .iter()
            .zip(&d.sequences[0].gt_homographies)
        {
            for (x, y) in a.entries().iter().zip(b.entries()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
        let pairs = iterate_pairs(&back).unwrap();
        assert_eq!(*pairs[2].target_image, *d.sequences[0].images[3].load().unwrap());
    }
}
