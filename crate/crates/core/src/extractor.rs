//! Built-in single-scale extractor: FAST segment-test corners, intensity
//! centroid orientation and steered BRIEF (256 tests) binary descriptors.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_io::{DescriptorMatrix, FeatureSet, Keypoint};
use crate::image::GrayImage;
use crate::rng::Lcg;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

pub const DESCRIPTOR_BITS: usize = 256;
pub const DESCRIPTOR_BYTES: usize = DESCRIPTOR_BITS / 8;
pub const PATCH_SIZE: i32 = 31;
const PATCH_HALF: i32 = PATCH_SIZE / 2;
pub const ORIENTATION_RADIUS: i32 = 15;
pub const DEFAULT_PATTERN_SEED: u64 = 42;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("image {width}x{height} too small for border {border}")]
    ImageTooSmall { width: u32, height: u32, border: u32 },
    #[error("support region around ({x}, {y}) leaves the image")]
    OutOfBounds { x: f32, y: f32 },
    #[error("invalid extractor configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastConfig {
    pub intensity_threshold: u8,
    pub arc_length: usize,
    pub nms_radius: u32,
    pub border: u32,
    pub max_keypoints: usize,
}

impl Default for FastConfig {
    fn default() -> Self {
        Self {
            intensity_threshold: 20,
            arc_length: 9,
            nms_radius: 3,
            border: 16,
            max_keypoints: 2000,
        }
    }
}

impl FastConfig {
    pub fn validate(&self) -> Result<(), ExtractError> {
        if !(1..=16).contains(&self.arc_length) {
            return Err(ExtractError::InvalidConfig(format!(
                "arc_length must be in 1..=16, got {}",
                self.arc_length
            )));
        }
        if self.border < 16 {
            return Err(ExtractError::InvalidConfig(format!(
                "border must be at least 16, got {}",
                self.border
            )));
        }
        Ok(())
    }
}

/// Segment test at `(x, y)`: `Some(score)` when at least `arc_length`
/// contiguous circle pixels are all brighter than `I(p) + t` or all darker
/// than `I(p) - t`. The score is the largest sum of `|I(c) - I(p)|` over a
/// qualifying maximal arc.
///
/// The circle must lie inside the image.
pub fn segment_test(img: &GrayImage, x: u32, y: u32, threshold: u8, arc_length: usize) -> Option<u32> {
    let center = i32::from(img.get(x, y));
    let t = i32::from(threshold);
    let mut diffs = [0i32; 16];
    let mut states = [0i8; 16];
    for (k, (dx, dy)) in CIRCLE.iter().enumerate() {
        let v = i32::from(img.get((x as i32 + dx) as u32, (y as i32 + dy) as u32));
        let d = v - center;
        diffs[k] = d.abs();
        states[k] = if d > t {
            1
        } else if d < -t {
            -1
        } else {
            0
        };
    }

    if states.iter().all(|&s| s == states[0]) {
        return (states[0] != 0).then(|| diffs.iter().map(|&d| d as u32).sum());
    }
    // start right after a state change so no run wraps past the scan origin
    let start = (0..16).find(|&k| states[k] != states[(k + 15) % 16])?;
    let mut best: Option<u32> = None;
    let mut run_len = 0usize;
    let mut run_sum = 0u32;
    let mut run_state = 0i8;
    for step in 0..=16 {
        let k = (start + step) % 16;
        let s = if step == 16 { 0 } else { states[k] };
        if step < 16 && s == run_state && s != 0 {
            run_len += 1;
            run_sum += diffs[k] as u32;
            continue;
        }
        if run_state != 0 && run_len >= arc_length {
            best = Some(best.map_or(run_sum, |b| b.max(run_sum)));
        }
        run_state = s;
        run_len = usize::from(s != 0);
        run_sum = if s != 0 { diffs[k] as u32 } else { 0 };
    }
    best
}

/// Segment-test responses before non-maximum suppression, in raster order.
pub fn fast_candidates(img: &GrayImage, cfg: &FastConfig) -> Result<Vec<(u32, u32, u32)>, ExtractError> {
    cfg.validate()?;
    let (w, h) = img.size();
    if w <= 2 * cfg.border || h <= 2 * cfg.border {
        return Err(ExtractError::ImageTooSmall {
            width: w,
            height: h,
            border: cfg.border,
        });
    }
    let mut out = Vec::new();
    for y in cfg.border..h - cfg.border {
        for x in cfg.border..w - cfg.border {
            if let Some(score) = segment_test(img, x, y, cfg.intensity_threshold, cfg.arc_length) {
                out.push((x, y, score));
            }
        }
    }
    Ok(out)
}

/// FAST corners after greedy Chebyshev-radius suppression, sorted by score
/// descending (ties by `(y, x)` ascending) and truncated to `max_keypoints`.
pub fn detect_fast(img: &GrayImage, cfg: &FastConfig) -> Result<Vec<Keypoint>, ExtractError> {
    let mut candidates = fast_candidates(img, cfg)?;
    candidates.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));

    let (w, h) = img.size();
    let r = cfg.nms_radius as i64;
    let mut taken = vec![false; w as usize * h as usize];
    let mut out = Vec::new();
    for (x, y, score) in candidates {
        if out.len() >= cfg.max_keypoints {
            break;
        }
        let (xi, yi) = (i64::from(x), i64::from(y));
        let blocked = (yi - r..=yi + r)
            .filter(|&yy| yy >= 0 && yy < i64::from(h))
            .any(|yy| {
                (xi - r..=xi + r)
                    .filter(|&xx| xx >= 0 && xx < i64::from(w))
                    .any(|xx| taken[(yy * i64::from(w) + xx) as usize])
            });
        if blocked {
            continue;
        }
        taken[(yi * i64::from(w) + xi) as usize] = true;
        out.push(Keypoint {
            x: x as f32,
            y: y as f32,
            scale: 0.0,
            angle: f32::NAN,
            score: score as f32,
        });
    }
    Ok(out)
}

fn pixel_center(kp: &Keypoint) -> (i64, i64) {
    (f64::from(kp.x).round() as i64, f64::from(kp.y).round() as i64)
}

/// Intensity-centroid orientation `atan2(m01, m10)` over the disc of the
/// given radius, in `[0, 2π)`; a zero moment vector yields 0.
pub fn compute_orientation(img: &GrayImage, kp: &Keypoint, radius: i32) -> Result<f64, ExtractError> {
    let (cx, cy) = pixel_center(kp);
    let r = i64::from(radius);
    if cx - r < 0 || cy - r < 0 || cx + r >= i64::from(img.width()) || cy + r >= i64::from(img.height()) {
        return Err(ExtractError::OutOfBounds { x: kp.x, y: kp.y });
    }
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let v = i64::from(img.get((cx + dx) as u32, (cy + dy) as u32));
            m10 += dx * v;
            m01 += dy * v;
        }
    }
    if m10 == 0 && m01 == 0 {
        return Ok(0.0);
    }
    let mut angle = (m01 as f64).atan2(m10 as f64);
    if angle < 0.0 {
        angle += TAU;
    }
    Ok(if angle >= TAU { 0.0 } else { angle })
}

/// 256 point pairs inside the 31x31 patch, drawn from an isotropic Gaussian
/// (σ = 31/5) with the portable LCG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BriefPattern {
    pub seed: u64,
    pub pairs: Vec<[(i8, i8); 2]>,
}

impl BriefPattern {
    pub fn new(seed: u64) -> Self {
        let mut rng = Lcg::new(seed);
        let sigma = f64::from(PATCH_SIZE) / 5.0;
        let coord = move |rng: &mut Lcg| {
            (rng.next_gaussian() * sigma)
                .round()
                .clamp(-f64::from(PATCH_HALF), f64::from(PATCH_HALF)) as i8
        };
        let pairs = (0..DESCRIPTOR_BITS)
            .map(|_| loop {
                let a = (coord(&mut rng), coord(&mut rng));
                let b = (coord(&mut rng), coord(&mut rng));
                if a != b {
                    break [a, b];
                }
            })
            .collect();
        Self { seed, pairs }
    }
}

impl Default for BriefPattern {
    fn default() -> Self {
        Self::new(DEFAULT_PATTERN_SEED)
    }
}

/// Steered BRIEF on an image already passed through [`GrayImage::box_blur5`].
/// A NaN keypoint angle is treated as 0.
pub fn describe_brief_smoothed(
    smoothed: &GrayImage,
    kp: &Keypoint,
    pattern: &BriefPattern,
) -> Result<[u8; DESCRIPTOR_BYTES], ExtractError> {
    let angle = if kp.angle.is_nan() { 0.0 } else { f64::from(kp.angle) };
    let (s, c) = angle.sin_cos();
    let (kx, ky) = (f64::from(kp.x), f64::from(kp.y));
    let sample = |(px, py): (i8, i8)| {
        let (px, py) = (f64::from(px), f64::from(py));
        let x = (kx + c * px - s * py).round() as i64;
        let y = (ky + s * px + c * py).round() as i64;
        smoothed
            .get_signed(x, y)
            .ok_or(ExtractError::OutOfBounds { x: kp.x, y: kp.y })
    };
    let mut desc = [0u8; DESCRIPTOR_BYTES];
    for (i, [a, b]) in pattern.pairs.iter().enumerate() {
        if sample(*a)? < sample(*b)? {
            desc[i / 8] |= 1 << (i % 8);
        }
    }
    Ok(desc)
}

/// Steered BRIEF; smooths `img` with the 5x5 box filter first.
pub fn describe_brief(
    img: &GrayImage,
    kp: &Keypoint,
    pattern: &BriefPattern,
) -> Result<[u8; DESCRIPTOR_BYTES], ExtractError> {
    describe_brief_smoothed(&img.box_blur5(), kp, pattern)
}

/// Detection, orientation and description with a fixed config and pattern.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub config: FastConfig,
    pub pattern: BriefPattern,
}

impl Extractor {
    pub fn new(config: FastConfig, pattern_seed: u64) -> Result<Self, ExtractError> {
        config.validate()?;
        Ok(Self {
            config,
            pattern: BriefPattern::new(pattern_seed),
        })
    }

    /// Keypoints whose orientation disc or rotated pattern leaves the image
    /// are dropped.
    pub fn extract(&self, img: &GrayImage, image_id: &str) -> Result<FeatureSet, ExtractError> {
        let detected = detect_fast(img, &self.config)?;
        let smoothed = img.box_blur5();
        let mut keypoints = Vec::with_capacity(detected.len());
        let mut data = Vec::with_capacity(detected.len() * DESCRIPTOR_BYTES);
        for mut kp in detected {
            let Ok(angle) = compute_orientation(img, &kp, ORIENTATION_RADIUS) else {
                continue;
            };
            // stored precision is f32; keep the stored angle strictly below 2π
            let stored = angle as f32;
            kp.angle = if f64::from(stored) >= TAU { 0.0 } else { stored };
            kp.scale = PATCH_SIZE as f32;
            let Ok(desc) = describe_brief_smoothed(&smoothed, &kp, &self.pattern) else {
                continue;
            };
            keypoints.push(kp);
            data.extend_from_slice(&desc);
        }
        Ok(FeatureSet {
            image_id: image_id.to_string(),
            image_size: img.size(),
            keypoints,
            descriptors: DescriptorMatrix::PackedBinary {
                dim: DESCRIPTOR_BITS,
                data,
            },
        })
    }
}

pub fn extract(img: &GrayImage, cfg: &FastConfig, pattern_seed: u64) -> Result<FeatureSet, ExtractError> {
    Extractor::new(*cfg, pattern_seed)?.extract(img, "")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::textured_image;
    use crate::feature_io::{hamming_distance, DescriptorRow};

    /// Exhaustive segment test: try every start offset and both polarities.
    fn oracle_is_corner(img: &GrayImage, x: u32, y: u32, t: u8, n: usize) -> bool {
        let c = i32::from(img.get(x, y));
        let ring: Vec<i32> = CIRCLE
            .iter()
            .map(|(dx, dy)| i32::from(img.get((x as i32 + dx) as u32, (y as i32 + dy) as u32)))
            .collect();
        for start in 0..16 {
            let bright = (0..n).all(|k| ring[(start + k) % 16] > c + i32::from(t));
            let dark = (0..n).all(|k| ring[(start + k) % 16] < c - i32::from(t));
            if bright || dark {
                return true;
            }
        }
        false
    }

    fn random_image(seed: u64, w: u32, h: u32) -> GrayImage {
        let mut rng = Lcg::new(seed);
        GrayImage::from_fn(w, h, |_, _| rng.next_below(256) as u8)
    }

    fn square_image() -> GrayImage {
        GrayImage::from_fn(64, 64, |x, y| {
            if (30..35).contains(&x) && (30..35).contains(&y) {
                255
            } else {
                0
            }
        })
    }

    #[test]
    fn candidates_agree_with_exhaustive_oracle() {
        for seed in 0..6 {
            let img = random_image(seed, 64, 64);
            for (t, n) in [(20u8, 9usize), (40, 12), (10, 16), (60, 1)] {
                let cfg = FastConfig {
                    intensity_threshold: t,
                    arc_length: n,
                    ..Default::default()
                };
                let got: Vec<(u32, u32)> = fast_candidates(&img, &cfg)
                    .unwrap()
                    .into_iter()
                    .map(|(x, y, _)| (x, y))
                    .collect();
                let mut expected = Vec::new();
                for y in 16..48 {
                    for x in 16..48 {
                        if oracle_is_corner(&img, x, y, t, n) {
                            expected.push((x, y));
                        }
                    }
                }
                assert_eq!(got, expected, "seed {seed} t {t} n {n}");
            }
        }
    }

    #[test]
    fn full_ring_scores_all_sixteen() {
        let img = GrayImage::from_fn(40, 40, |x, y| if x == 20 && y == 20 { 200 } else { 10 });
        assert_eq!(segment_test(&img, 20, 20, 20, 9), Some(16 * 190));
        assert_eq!(segment_test(&img, 20, 21, 20, 9), None);
    }

    #[test]
    fn constant_image_has_no_corners() {
        let img = GrayImage::filled(64, 64, 128);
        assert!(detect_fast(&img, &FastConfig::default()).unwrap().is_empty());
        let f = extract(&img, &FastConfig::default(), 42).unwrap();
        assert!(f.is_empty());
        f.validate().unwrap();
    }

    #[test]
    fn too_small_and_bad_config() {
        let img = GrayImage::filled(32, 100, 0);
        assert!(matches!(
            detect_fast(&img, &FastConfig::default()),
            Err(ExtractError::ImageTooSmall { .. })
        ));
        let cfg = FastConfig {
            arc_length: 17,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ExtractError::InvalidConfig(_))));
    }

    #[test]
    fn bright_square_corners() {
        let img = square_image();
        let kps = detect_fast(&img, &FastConfig::default()).unwrap();
        assert!(!kps.is_empty());
        let corners = [(30.0, 30.0), (34.0, 30.0), (30.0, 34.0), (34.0, 34.0)];
        for kp in &kps {
            let near = corners.iter().any(|(cx, cy)| {
                (f64::from(kp.x) - cx).hypot(f64::from(kp.y) - cy) <= 3.0
            });
            assert!(near, "keypoint ({}, {}) far from corners", kp.x, kp.y);
        }
        assert_eq!(kps, detect_fast(&img, &FastConfig::default()).unwrap());
    }

    #[test]
    fn nms_order_and_suppression() {
        let img = textured_image(128, 128, 3);
        let cfg = FastConfig::default();
        let kps = detect_fast(&img, &cfg).unwrap();
        assert!(kps.windows(2).all(|w| w[0].score >= w[1].score));
        for (i, a) in kps.iter().enumerate() {
            for b in &kps[i + 1..] {
                let cheb = (a.x - b.x).abs().max((a.y - b.y).abs());
                assert!(cheb > cfg.nms_radius as f32);
            }
        }
        let capped = detect_fast(&img, &FastConfig { max_keypoints: 5, ..cfg }).unwrap();
        assert_eq!(capped, kps[..5]);
    }

    #[test]
    fn shift_equivariance() {
        let base = textured_image(160, 160, 12);
        let (dx, dy) = (7u32, 4u32);
        let shifted = GrayImage::from_fn(160, 160, |x, y| {
            if x >= dx && y >= dy {
                base.get(x - dx, y - dy)
            } else {
                0
            }
        });
        let cfg = FastConfig {
            max_keypoints: usize::MAX,
            nms_radius: 0,
            ..Default::default()
        };
        let interior = |x: f32, y: f32| (30.0..120.0).contains(&x) && (30.0..120.0).contains(&y);
        let a: Vec<(f32, f32, f32)> = detect_fast(&base, &cfg)
            .unwrap()
            .iter()
            .filter(|k| interior(k.x, k.y))
            .map(|k| (k.x + dx as f32, k.y + dy as f32, k.score))
            .collect();
        let b: Vec<(f32, f32, f32)> = detect_fast(&shifted, &cfg)
            .unwrap()
            .iter()
            .filter(|k| interior(k.x - dx as f32, k.y - dy as f32))
            .map(|k| (k.x, k.y, k.score))
            .collect();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn orientation_examples() {
        let plus_x = GrayImage::from_fn(41, 41, |x, _| if x > 20 { 200 } else { 0 });
        let kp = Keypoint::at(20.0, 20.0);
        assert!(compute_orientation(&plus_x, &kp, 15).unwrap().abs() < 1e-6);
        let plus_y = GrayImage::from_fn(41, 41, |_, y| if y > 20 { 200 } else { 0 });
        let a = compute_orientation(&plus_y, &kp, 15).unwrap();
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        let minus_y = GrayImage::from_fn(41, 41, |_, y| if y < 20 { 200 } else { 0 });
        let a = compute_orientation(&minus_y, &kp, 15).unwrap();
        assert!((a - 1.5 * std::f64::consts::PI).abs() < 1e-6);
        let disc = GrayImage::from_fn(41, 41, |x, y| {
            let (dx, dy) = (x as i32 - 20, y as i32 - 20);
            if dx * dx + dy * dy < 50 { 255 } else { 30 }
        });
        assert_eq!(compute_orientation(&disc, &kp, 15).unwrap(), 0.0);
        assert!(matches!(
            compute_orientation(&disc, &Keypoint::at(5.0, 20.0), 15),
            Err(ExtractError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn pattern_is_deterministic_and_valid() {
        let p = BriefPattern::new(42);
        assert_eq!(p, BriefPattern::new(42));
        assert_ne!(p, BriefPattern::new(43));
        assert_eq!(p.pairs.len(), 256);
        for [a, b] in &p.pairs {
            assert_ne!(a, b);
            for v in [a.0, a.1, b.0, b.1] {
                assert!((-15..=15).contains(&v));
            }
        }
    }

    #[test]
    fn identical_patches_identical_bits() {
        let img = textured_image(96, 96, 4);
        let pattern = BriefPattern::default();
        let mut kp = Keypoint::at(48.0, 48.0);
        kp.angle = 0.7;
        let a = describe_brief(&img, &kp, &pattern).unwrap();
        let b = describe_brief(&img.clone(), &kp, &pattern).unwrap();
        assert_eq!(hamming_distance(&a, &b), 0);
        assert!(matches!(
            describe_brief(&img, &Keypoint::at(3.0, 48.0), &pattern),
            Err(ExtractError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn steered_descriptor_survives_rotation() {
        let img = textured_image(128, 128, 21);
        let theta = 30f64.to_radians();
        let (s, c) = theta.sin_cos();
        // rotate about the center (64, 64): rotated(q) = img(R^-1 (q - c) + c)
        let rotated = GrayImage::from_fn(128, 128, |x, y| {
            let (qx, qy) = (f64::from(x) - 64.0, f64::from(y) - 64.0);
            let px = c * qx + s * qy + 64.0;
            let py = -s * qx + c * qy + 64.0;
            img.sample_bilinear(px, py).map_or(0, |v| v.round() as u8)
        });
        let pattern = BriefPattern::default();
        let mut a = Keypoint::at(64.0, 64.0);
        a.angle = compute_orientation(&img, &a, ORIENTATION_RADIUS).unwrap() as f32;
        let mut b = Keypoint::at(64.0, 64.0);
        b.angle = compute_orientation(&rotated, &b, ORIENTATION_RADIUS).unwrap() as f32;
        let da = describe_brief(&img, &a, &pattern).unwrap();
        let db = describe_brief(&rotated, &b, &pattern).unwrap();
        let d = hamming_distance(&da, &db);
        assert!(d <= 64, "hamming {d}");
    }

    #[test]
    fn textured_extraction() {
        let img = textured_image(256, 256, 3);
        let f = extract(&img, &FastConfig::default(), 42).unwrap();
        assert!(f.len() > 50, "{} keypoints", f.len());
        assert_eq!(f.descriptors.dim(), 256);
        assert!(matches!(f.descriptors.row(0), DescriptorRow::Binary(r) if r.len() == 32));
        f.validate().unwrap();
        let again = extract(&img, &FastConfig::default(), 42).unwrap();
        assert_eq!(f.to_bytes().unwrap(), again.to_bytes().unwrap());
        assert!(f.keypoints.iter().all(|k| k.scale == 31.0 && !k.angle.is_nan()));
    }
}
