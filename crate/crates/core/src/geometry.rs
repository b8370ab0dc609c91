//! Planar projective geometry: homography algebra, Hartley-normalized DLT,
//! RANSAC with adaptive termination and a single inlier refit, and the
//! corner-transfer error used for homography estimation accuracy.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Lcg;

/// Denominator magnitude below which a projected point is at infinity.
const INFINITY_EPS: f64 = 1e-12;
const MIN_DET: f64 = 1e-12;
/// Second-smallest singular value of the normalized DLT system below which
/// the configuration is rank deficient.
const DLT_RANK_EPS: f64 = 1e-10;
/// Minimal samples with any triangle smaller than this (px^2) are skipped.
const MIN_SAMPLE_AREA: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("homography has non-finite entries")]
    NonFinite,
    #[error("homography is singular (|det| = {0:e})")]
    Singular(f64),
    #[error("point ({x}, {y}) maps to infinity")]
    PointAtInfinity { x: f64, y: f64 },
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("need at least 4 correspondences, got {0}")]
    TooFewMatches(usize),
    #[error("every RANSAC sample was degenerate")]
    NoModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A putative match between a reference-image point `p` and a target-image
/// point `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub p: Point2,
    pub q: Point2,
}

impl Correspondence {
    pub const fn new(p: Point2, q: Point2) -> Self {
        Self { p, q }
    }
}

/// 3x3 projective transform, row-major, normalized so that `h33 = 1`.
///
/// When `|h33| < 1e-9` the matrix is instead scaled to unit Frobenius norm
/// and [`Homography::is_frobenius_normalized`] reports it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    h: [f64; 9],
    frobenius: bool,
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        h: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        frobenius: false,
    };

    pub fn new(h: [f64; 9]) -> Result<Self, GeometryError> {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let (scale, frobenius) = if h[8].abs() >= 1e-9 {
            (h[8], false)
        } else {
            (h.iter().map(|v| v * v).sum::<f64>().sqrt(), true)
        };
        if scale == 0.0 {
            return Err(GeometryError::Singular(0.0));
        }
        let mut n = [0.0; 9];
        for (dst, src) in n.iter_mut().zip(h.iter()) {
            *dst = src / scale;
        }
        let out = Self { h: n, frobenius };
        let det = out.determinant();
        if !(det.abs() > MIN_DET) {
            return Err(GeometryError::Singular(det));
        }
        Ok(out)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new([1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0]).expect("translation is invertible")
    }

    pub fn scaling(s: f64) -> Result<Self, GeometryError> {
        Self::new([s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        Self::new([
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ])
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.h)
    }

    pub fn entries(&self) -> &[f64; 9] {
        &self.h
    }

    pub fn is_frobenius_normalized(&self) -> bool {
        self.frobenius
    }

    pub fn determinant(&self) -> f64 {
        let h = &self.h;
        h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6])
            + h[2] * (h[3] * h[7] - h[4] * h[6])
    }

    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let h = &self.h;
        // adjugate; the determinant factor cancels in the renormalization
        let adj = [
            h[4] * h[8] - h[5] * h[7],
            h[2] * h[7] - h[1] * h[8],
            h[1] * h[5] - h[2] * h[4],
            h[5] * h[6] - h[3] * h[8],
            h[0] * h[8] - h[2] * h[6],
            h[2] * h[3] - h[0] * h[5],
            h[3] * h[7] - h[4] * h[6],
            h[1] * h[6] - h[0] * h[7],
            h[0] * h[4] - h[1] * h[3],
        ];
        let det = self.determinant();
        let mut inv = [0.0; 9];
        for (dst, src) in inv.iter_mut().zip(adj.iter()) {
            *dst = src / det;
        }
        Self::new(inv)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Result<Self, GeometryError> {
        Self::from_matrix(&(self.to_matrix() * other.to_matrix()))
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, GeometryError> {
        apply_homography(self, p)
    }
}

pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2, GeometryError> {
    let m = &h.h;
    let w = m[6] * p.x + m[7] * p.y + m[8];
    if w.abs() < INFINITY_EPS {
        return Err(GeometryError::PointAtInfinity { x: p.x, y: p.y });
    }
    Ok(Point2::new(
        (m[0] * p.x + m[1] * p.y + m[2]) / w,
        (m[3] * p.x + m[4] * p.y + m[5]) / w,
    ))
}

/// `|H p - q|`, or `+inf` when `p` maps to infinity.
pub fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    match apply_homography(h, c.p) {
        Ok(projected) => projected.distance(&c.q),
        Err(_) => f64::INFINITY,
    }
}

/// Translate to the centroid and scale to mean distance sqrt(2).
fn hartley_normalization<'a>(
    points: impl Iterator<Item = &'a Point2> + Clone,
) -> Option<(f64, f64, f64)> {
    let mut n = 0usize;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.clone() {
        cx += p.x;
        cy += p.y;
        n += 1;
    }
    cx /= n as f64;
    cy /= n as f64;
    let mean_dist = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n as f64;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return None;
    }
    Some((cx, cy, std::f64::consts::SQRT_2 / mean_dist))
}

/// Hartley-normalized direct linear transform over all correspondences
/// (least squares via the smallest right singular vector).
pub fn dlt_homography(corrs: &[Correspondence]) -> Result<Homography, GeometryError> {
    let n = corrs.len();
    if n < 4 {
        return Err(GeometryError::TooFewMatches(n));
    }
    let (pcx, pcy, ps) =
        hartley_normalization(corrs.iter().map(|c| &c.p)).ok_or(GeometryError::DegenerateConfiguration)?;
    let (qcx, qcy, qs) =
        hartley_normalization(corrs.iter().map(|c| &c.q)).ok_or(GeometryError::DegenerateConfiguration)?;

    // zero rows pad the minimal case up to 9 so the full V is available
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, c) in corrs.iter().enumerate() {
        let x = (c.p.x - pcx) * ps;
        let y = (c.p.y - pcy) * ps;
        let u = (c.q.x - qcx) * qs;
        let v = (c.q.y - qcy) * qs;
        let r = 2 * k;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let smallest = order[0];
    let second = sv[order[1]];
    if !(second >= DLT_RANK_EPS) {
        return Err(GeometryError::DegenerateConfiguration);
    }

    let row = v_t.row(smallest);
    let hn = Matrix3::new(
        row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7], row[8],
    );
    let tp = Matrix3::new(ps, 0.0, -ps * pcx, 0.0, ps, -ps * pcy, 0.0, 0.0, 1.0);
    let tq_inv = Matrix3::new(1.0 / qs, 0.0, qcx, 0.0, 1.0 / qs, qcy, 0.0, 0.0, 1.0);
    Homography::from_matrix(&(tq_inv * hn * tp)).map_err(|e| match e {
        GeometryError::Singular(_) | GeometryError::NonFinite => {
            GeometryError::DegenerateConfiguration
        }
        other => other,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier cutoff on reprojection error, px (strict `<`).
    pub reproj_threshold: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            reproj_threshold: 3.0,
            max_iters: 5000,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.reproj_threshold > 0.0) {
            return Err(format!(
                "reprojection threshold must be positive, got {}",
                self.reproj_threshold
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.max_iters == 0 {
            return Err("max_iters must be at least 1".into());
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult {
    pub homography: Homography,
    pub inlier_mask: Vec<bool>,
    pub iterations_run: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

fn triangle_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs()
}

/// True if any three of the four points span less than the minimum area.
fn is_degenerate_sample(pts: [Point2; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| triangle_area(pts[t[0]], pts[t[1]], pts[t[2]]) < MIN_SAMPLE_AREA)
}

fn inlier_mask(h: &Homography, corrs: &[Correspondence], threshold: f64) -> (Vec<bool>, usize) {
    let mask: Vec<bool> = corrs
        .iter()
        .map(|c| reprojection_error(h, c) < threshold)
        .collect();
    let count = mask.iter().filter(|&&b| b).count();
    (mask, count)
}

/// Iterations needed to draw one all-inlier minimal sample with the given
/// confidence when a fraction `inlier_ratio` of the data are inliers.
fn required_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let p_good = inlier_ratio.powi(4);
    if p_good >= 1.0 {
        return 0;
    }
    let denom = (1.0 - p_good).ln();
    if !(denom < 0.0) {
        return cap;
    }
    let n = ((1.0 - confidence).ln() / denom).ceil();
    if n.is_finite() && n < cap as f64 {
        n.max(0.0) as usize
    } else {
        cap
    }
}

/// Vanilla RANSAC over 4-point minimal samples followed by one DLT refit on
/// the best consensus set.
pub fn ransac_homography(
    corrs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<RansacResult, GeometryError> {
    let n = corrs.len();
    if n < 4 {
        return Err(GeometryError::TooFewMatches(n));
    }
    let mut rng = Lcg::new(cfg.seed);
    let mut best: Option<(Homography, Vec<bool>, usize)> = None;
    let mut needed = cfg.max_iters;
    let mut iter = 0usize;

    while iter < needed {
        iter += 1;
        let idx: [usize; 4] = rng.distinct_indices(n);
        let sample = idx.map(|i| corrs[i]);
        if is_degenerate_sample(sample.map(|c| c.p)) {
            continue;
        }
        let Ok(model) = dlt_homography(&sample) else {
            continue;
        };
        let (mask, count) = inlier_mask(&model, corrs, cfg.reproj_threshold);
        let improves = best.as_ref().is_none_or(|(_, _, c)| count > *c);
        if improves {
            let ratio = count as f64 / n as f64;
            needed = required_iterations(ratio, cfg.confidence, cfg.max_iters);
            best = Some((model, mask, count));
        }
    }

    let (model, mask, count) = best.ok_or(GeometryError::NoModel)?;
    let refit = if count >= 4 {
        let inliers: Vec<Correspondence> = corrs
            .iter()
            .zip(&mask)
            .filter_map(|(c, &m)| m.then_some(*c))
            .collect();
        dlt_homography(&inliers).ok().and_then(|h| {
            let (m2, c2) = inlier_mask(&h, corrs, cfg.reproj_threshold);
            (c2 >= 4).then_some((h, m2))
        })
    } else {
        None
    };
    let (homography, inlier_mask) = refit.unwrap_or((model, mask));
    Ok(RansacResult {
        homography,
        inlier_mask,
        iterations_run: iter,
    })
}

/// Ref-image corners at pixel centers: (0,0), (w-1,0), (0,h-1), (w-1,h-1).
pub fn image_corners(size: (u32, u32)) -> [Point2; 4] {
    let w = f64::from(size.0) - 1.0;
    let h = f64::from(size.1) - 1.0;
    [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(0.0, h),
        Point2::new(w, h),
    ]
}

/// Mean distance between the four reference corners mapped by the estimate
/// and by the ground truth; `+inf` if any corner goes to infinity.
pub fn corner_transfer_error(est: &Homography, gt: &Homography, size: (u32, u32)) -> f64 {
    let mut total = 0.0;
    for corner in image_corners(size) {
        match (apply_homography(est, corner), apply_homography(gt, corner)) {
            (Ok(a), Ok(b)) => total += a.distance(&b),
            _ => return f64::INFINITY,
        }
    }
    total / 4.0
}
