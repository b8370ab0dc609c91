//! Keypoint/descriptor and scored-match interchange formats, plus descriptor
//! distance metrics.
//!
//! Feature files (`FEATv1`), little-endian:
//!
//! ```text
//! magic      8 bytes  "FEATv1\0\0"
//! kind       u8       0 = Float32, 1 = PackedBinary
//! reserved   3 bytes  zero
//! image_id   u16 length + UTF-8 bytes
//! width      u32
//! height     u32
//! rows       u32
//! dim        u32      floats, or bits for PackedBinary
//! keypoints  rows x 5 f32 (x, y, scale, angle, score)
//! payload    rows x dim f32, or rows x ceil(dim/8) bytes (bit i in byte i/8, LSB first)
//! ```
//!
//! Scored-match files (`MTCHv1`): magic "MTCHv1\0\0", two u16-prefixed image
//! ids, u32 count, then count x 5 f32 (x1, y1, x2, y2, confidence).
//!
//! Files with a `.json` extension use a JSON mirror with the same field names.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

const FEATURE_MAGIC: &[u8; 8] = b"FEATv1\0\0";
const MATCH_MAGIC: &[u8; 8] = b"MTCHv1\0\0";

#[derive(Debug, Error)]
pub enum FeatureIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: String, expected: String },
    #[error("unsupported format version {0:?}")]
    VersionUnsupported(String),
    #[error("file truncated while reading {0}")]
    TruncatedFile(&'static str),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("metric {metric:?} cannot compare {kind:?} descriptors")]
    MetricMismatch { metric: Metric, kind: DescriptorKind },
    #[error("descriptor dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureIoError + '_ {
    move |source| FeatureIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn violation(msg: impl Into<String>) -> FeatureIoError {
    FeatureIoError::InvariantViolation(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    Hamming,
}

impl Metric {
    /// The metric matching a descriptor kind.
    pub fn for_kind(kind: DescriptorKind) -> Self {
        match kind {
            DescriptorKind::Float32 => Metric::L2,
            DescriptorKind::PackedBinary => Metric::Hamming,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Float32,
    PackedBinary,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Support size in px; 0 when unknown.
    pub scale: f32,
    /// Radians in `[0, 2π)`, NaN when the detector gives no orientation.
    #[serde(with = "nan_as_null")]
    pub angle: f32,
    pub score: f32,
}

impl Keypoint {
    pub fn at(x: f32, y: f32) -> Self {
        Self {
            x,
            y,
            scale: 0.0,
            angle: f32::NAN,
            score: 0.0,
        }
    }

    fn bitwise_eq(&self, other: &Self) -> bool {
        self.x.to_bits() == other.x.to_bits()
            && self.y.to_bits() == other.y.to_bits()
            && self.scale.to_bits() == other.scale.to_bits()
            && self.angle.to_bits() == other.angle.to_bits()
            && self.score.to_bits() == other.score.to_bits()
    }
}

/// Bit-level equality, so NaN angles compare equal to themselves.
impl PartialEq for Keypoint {
    fn eq(&self, other: &Self) -> bool {
        self.bitwise_eq(other)
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f32, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f32(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
        Ok(Option::<f32>::deserialize(d)?.unwrap_or(f32::NAN))
    }
}

/// Row-major descriptor storage.
#[derive(Clone, Debug)]
pub enum DescriptorMatrix {
    Float32 { dim: usize, data: Vec<f32> },
    /// `dim` is the number of meaningful bits per row.
    PackedBinary { dim: usize, data: Vec<u8> },
}

/// A borrowed descriptor row.
#[derive(Clone, Copy, Debug)]
pub enum DescriptorRow<'a> {
    Float(&'a [f32]),
    Binary(&'a [u8]),
}

impl DescriptorRow<'_> {
    pub fn kind(&self) -> DescriptorKind {
        match self {
            DescriptorRow::Float(_) => DescriptorKind::Float32,
            DescriptorRow::Binary(_) => DescriptorKind::PackedBinary,
        }
    }
}

impl DescriptorMatrix {
    pub fn empty(kind: DescriptorKind, dim: usize) -> Self {
        match kind {
            DescriptorKind::Float32 => DescriptorMatrix::Float32 { dim, data: Vec::new() },
            DescriptorKind::PackedBinary => DescriptorMatrix::PackedBinary { dim, data: Vec::new() },
        }
    }

    pub fn kind(&self) -> DescriptorKind {
        match self {
            DescriptorMatrix::Float32 { .. } => DescriptorKind::Float32,
            DescriptorMatrix::PackedBinary { .. } => DescriptorKind::PackedBinary,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DescriptorMatrix::Float32 { dim, .. } | DescriptorMatrix::PackedBinary { dim, .. } => {
                *dim
            }
        }
    }

    /// Elements (floats or bytes) per stored row.
    pub fn row_stride(&self) -> usize {
        match self {
            DescriptorMatrix::Float32 { dim, .. } => *dim,
            DescriptorMatrix::PackedBinary { dim, .. } => dim.div_ceil(8),
        }
    }

    pub fn rows(&self) -> usize {
        let stride = self.row_stride();
        if stride == 0 {
            return 0;
        }
        match self {
            DescriptorMatrix::Float32 { data, .. } => data.len() / stride,
            DescriptorMatrix::PackedBinary { data, .. } => data.len() / stride,
        }
    }

    pub fn row(&self, i: usize) -> DescriptorRow<'_> {
        let s = self.row_stride();
        match self {
            DescriptorMatrix::Float32 { data, .. } => DescriptorRow::Float(&data[i * s..(i + 1) * s]),
            DescriptorMatrix::PackedBinary { data, .. } => {
                DescriptorRow::Binary(&data[i * s..(i + 1) * s])
            }
        }
    }

    fn stored_len(&self) -> usize {
        match self {
            DescriptorMatrix::Float32 { data, .. } => data.len(),
            DescriptorMatrix::PackedBinary { data, .. } => data.len(),
        }
    }

    fn bitwise_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                DescriptorMatrix::Float32 { dim: a, data: x },
                DescriptorMatrix::Float32 { dim: b, data: y },
            ) => a == b && x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()),
            (
                DescriptorMatrix::PackedBinary { dim: a, data: x },
                DescriptorMatrix::PackedBinary { dim: b, data: y },
            ) => a == b && x == y,
            _ => false,
        }
    }
}

/// Keypoints and their descriptors for one image.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub image_id: String,
    /// (width, height) in px.
    pub image_size: (u32, u32),
    pub keypoints: Vec<Keypoint>,
    pub descriptors: DescriptorMatrix,
}

/// Bit-level equality: NaN angles compare equal to themselves.
impl PartialEq for FeatureSet {
    fn eq(&self, other: &Self) -> bool {
        self.image_id == other.image_id
            && self.image_size == other.image_size
            && self.keypoints.len() == other.keypoints.len()
            && self
                .keypoints
                .iter()
                .zip(&other.keypoints)
                .all(|(a, b)| a.bitwise_eq(b))
            && self.descriptors.bitwise_eq(&other.descriptors)
    }
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn validate(&self) -> Result<(), FeatureIoError> {
        let d = &self.descriptors;
        if d.dim() == 0 {
            return Err(violation("descriptor dim must be at least 1"));
        }
        if self.image_id.len() > usize::from(u16::MAX) {
            return Err(violation("image id longer than 65535 bytes"));
        }
        let expected = self.keypoints.len() * d.row_stride();
        if d.stored_len() != expected {
            return Err(violation(format!(
                "descriptor payload has {} elements, expected {} for {} keypoints",
                d.stored_len(),
                expected,
                self.keypoints.len()
            )));
        }
        if let DescriptorMatrix::PackedBinary { dim, data } = d {
            let tail_bits = dim % 8;
            if tail_bits != 0 {
                let stride = d.row_stride();
                let mask = !((1u8 << tail_bits) - 1);
                if let Some(r) = data.chunks(stride).position(|row| row[stride - 1] & mask != 0) {
                    return Err(violation(format!("row {r} has non-zero padding bits")));
                }
            }
        }
        let (w, h) = self.image_size;
        let (max_x, max_y) = (f64::from(w) - 0.5, f64::from(h) - 0.5);
        for (i, kp) in self.keypoints.iter().enumerate() {
            let (x, y) = (f64::from(kp.x), f64::from(kp.y));
            if !(x.is_finite() && y.is_finite()) {
                return Err(violation(format!("keypoint {i} has non-finite coordinates")));
            }
            if x < -0.5 || y < -0.5 || x > max_x || y > max_y {
                return Err(violation(format!(
                    "keypoint {i} at ({x}, {y}) outside {w}x{h} image"
                )));
            }
            if !kp.angle.is_nan() && !(kp.angle >= 0.0 && f64::from(kp.angle) < TAU) {
                return Err(violation(format!("keypoint {i} angle {} outside [0, 2π)", kp.angle)));
            }
            if !(kp.scale >= 0.0) {
                return Err(violation(format!("keypoint {i} has negative scale")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FeatureIoError> {
        self.validate()?;
        let d = &self.descriptors;
        let mut out = Vec::with_capacity(
            32 + self.image_id.len() + self.keypoints.len() * (20 + d.row_stride() * 4),
        );
        out.extend_from_slice(FEATURE_MAGIC);
        out.push(match d.kind() {
            DescriptorKind::Float32 => 0,
            DescriptorKind::PackedBinary => 1,
        });
        out.extend_from_slice(&[0, 0, 0]);
        put_str(&mut out, &self.image_id);
        out.extend_from_slice(&self.image_size.0.to_le_bytes());
        out.extend_from_slice(&self.image_size.1.to_le_bytes());
        out.extend_from_slice(&(self.keypoints.len() as u32).to_le_bytes());
        out.extend_from_slice(&(d.dim() as u32).to_le_bytes());
        for kp in &self.keypoints {
            for v in [kp.x, kp.y, kp.scale, kp.angle, kp.score] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match d {
            DescriptorMatrix::Float32 { data, .. } => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            DescriptorMatrix::PackedBinary { data, .. } => out.extend_from_slice(data),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureIoError> {
        let mut r = Reader::new(bytes);
        check_magic(r.take(8, "magic")?, FEATURE_MAGIC)?;
        let kind = match r.u8("kind")? {
            0 => DescriptorKind::Float32,
            1 => DescriptorKind::PackedBinary,
            k => return Err(violation(format!("unknown descriptor kind {k}"))),
        };
        r.take(3, "reserved bytes")?;
        let image_id = r.string("image id")?;
        let width = r.u32("width")?;
        let height = r.u32("height")?;
        let rows = r.u32("row count")? as usize;
        let dim = r.u32("descriptor dim")? as usize;
        if dim == 0 {
            return Err(violation("descriptor dim must be at least 1"));
        }
        let mut keypoints = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            keypoints.push(Keypoint {
                x: r.f32("keypoints")?,
                y: r.f32("keypoints")?,
                scale: r.f32("keypoints")?,
                angle: r.f32("keypoints")?,
                score: r.f32("keypoints")?,
            });
        }
        let descriptors = match kind {
            DescriptorKind::Float32 => {
                let n = rows
                    .checked_mul(dim)
                    .ok_or(FeatureIoError::TruncatedFile("descriptors"))?;
                let raw = r.take(
                    n.checked_mul(4).ok_or(FeatureIoError::TruncatedFile("descriptors"))?,
                    "descriptors",
                )?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                DescriptorMatrix::Float32 { dim, data }
            }
            DescriptorKind::PackedBinary => {
                let n = rows
                    .checked_mul(dim.div_ceil(8))
                    .ok_or(FeatureIoError::TruncatedFile("descriptors"))?;
                DescriptorMatrix::PackedBinary {
                    dim,
                    data: r.take(n, "descriptors")?.to_vec(),
                }
            }
        };
        if !r.is_done() {
            return Err(violation(format!("{} trailing bytes", r.remaining())));
        }
        let set = FeatureSet {
            image_id,
            image_size: (width, height),
            keypoints,
            descriptors,
        };
        set.validate()?;
        Ok(set)
    }

    fn to_json(&self) -> Result<String, FeatureIoError> {
        self.validate()?;
        let descriptors = match &self.descriptors {
            DescriptorMatrix::Float32 { data, dim } => {
                serde_json::to_string(&data.chunks(*dim).collect::<Vec<_>>())?
            }
            DescriptorMatrix::PackedBinary { data, .. } => {
                let stride = self.descriptors.row_stride();
                serde_json::to_string(&data.chunks(stride).collect::<Vec<_>>())?
            }
        };
        let doc = FeatureSetJson {
            image_id: self.image_id.clone(),
            kind: self.descriptors.kind(),
            width: self.image_size.0,
            height: self.image_size.1,
            rows: self.keypoints.len() as u32,
            dim: self.descriptors.dim() as u32,
            keypoints: self.keypoints.clone(),
            descriptors: RawValue::from_string(descriptors)?,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    fn from_json(text: &str) -> Result<Self, FeatureIoError> {
        let doc: FeatureSetJson = serde_json::from_str(text)?;
        let dim = doc.dim as usize;
        let check_rows = |n: usize| {
            if n != doc.keypoints.len() || n != doc.rows as usize {
                Err(violation(format!(
                    "{} descriptor rows, {} keypoints, rows field {}",
                    n,
                    doc.keypoints.len(),
                    doc.rows
                )))
            } else {
                Ok(())
            }
        };
        let descriptors = match doc.kind {
            DescriptorKind::Float32 => {
                let rows: Vec<Vec<f32>> = serde_json::from_str(doc.descriptors.get())?;
                check_rows(rows.len())?;
                if rows.iter().any(|r| r.len() != dim) {
                    return Err(violation("descriptor row length differs from dim"));
                }
                DescriptorMatrix::Float32 {
                    dim,
                    data: rows.into_iter().flatten().collect(),
                }
            }
            DescriptorKind::PackedBinary => {
                let rows: Vec<Vec<u8>> = serde_json::from_str(doc.descriptors.get())?;
                check_rows(rows.len())?;
                if rows.iter().any(|r| r.len() != dim.div_ceil(8)) {
                    return Err(violation("packed row length differs from ceil(dim/8)"));
                }
                DescriptorMatrix::PackedBinary {
                    dim,
                    data: rows.into_iter().flatten().collect(),
                }
            }
        };
        let set = FeatureSet {
            image_id: doc.image_id,
            image_size: (doc.width, doc.height),
            keypoints: doc.keypoints,
            descriptors,
        };
        set.validate()?;
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureSetJson {
    image_id: String,
    kind: DescriptorKind,
    width: u32,
    height: u32,
    rows: u32,
    dim: u32,
    keypoints: Vec<Keypoint>,
    descriptors: Box<RawValue>,
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Writes a feature file; `.json` paths get the JSON mirror.
pub fn save_features(f: &FeatureSet, path: &Path) -> Result<(), FeatureIoError> {
    let bytes = if is_json(path) {
        f.to_json()?.into_bytes()
    } else {
        f.to_bytes()?
    };
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_features(path: &Path) -> Result<FeatureSet, FeatureIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if is_json(path) {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| violation(format!("not UTF-8: {e}")))?;
        FeatureSet::from_json(text)
    } else {
        FeatureSet::from_bytes(&bytes)
    }
}

/// One end-to-end correspondence with a confidence in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatch {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub confidence: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatchFile {
    pub image_id_a: String,
    pub image_id_b: String,
    pub entries: Vec<ScoredMatch>,
}

impl ScoredMatchFile {
    pub fn validate(&self) -> Result<(), FeatureIoError> {
        for id in [&self.image_id_a, &self.image_id_b] {
            if id.len() > usize::from(u16::MAX) {
                return Err(violation("image id longer than 65535 bytes"));
            }
        }
        for (i, e) in self.entries.iter().enumerate() {
            if ![e.x1, e.y1, e.x2, e.y2].iter().all(|v| v.is_finite()) {
                return Err(violation(format!("entry {i} has non-finite coordinates")));
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(violation(format!(
                    "entry {i} confidence {} outside [0, 1]",
                    e.confidence
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FeatureIoError> {
        self.validate()?;
        let mut out = Vec::with_capacity(24 + self.entries.len() * 20);
        out.extend_from_slice(MATCH_MAGIC);
        put_str(&mut out, &self.image_id_a);
        put_str(&mut out, &self.image_id_b);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            for v in [e.x1, e.y1, e.x2, e.y2, e.confidence] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureIoError> {
        let mut r = Reader::new(bytes);
        check_magic(r.take(8, "magic")?, MATCH_MAGIC)?;
        let image_id_a = r.string("image id a")?;
        let image_id_b = r.string("image id b")?;
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            entries.push(ScoredMatch {
                x1: r.f32("entries")?,
                y1: r.f32("entries")?,
                x2: r.f32("entries")?,
                y2: r.f32("entries")?,
                confidence: r.f32("entries")?,
            });
        }
        if !r.is_done() {
            return Err(violation(format!("{} trailing bytes", r.remaining())));
        }
        let file = ScoredMatchFile {
            image_id_a,
            image_id_b,
            entries,
        };
        file.validate()?;
        Ok(file)
    }
}

pub fn save_scored_matches(m: &ScoredMatchFile, path: &Path) -> Result<(), FeatureIoError> {
    let bytes = if is_json(path) {
        m.validate()?;
        serde_json::to_vec_pretty(m)?
    } else {
        m.to_bytes()?
    };
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_scored_matches(path: &Path) -> Result<ScoredMatchFile, FeatureIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if is_json(path) {
        let m: ScoredMatchFile = serde_json::from_slice(&bytes)?;
        m.validate()?;
        Ok(m)
    } else {
        ScoredMatchFile::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn check_magic(found: &[u8], expected: &[u8; 8]) -> Result<(), FeatureIoError> {
    if found[..4] != expected[..4] {
        return Err(FeatureIoError::BadMagic {
            found: String::from_utf8_lossy(found).into_owned(),
            expected: String::from_utf8_lossy(expected).into_owned(),
        });
    }
    if found[4..] != expected[4..] {
        return Err(FeatureIoError::VersionUnsupported(
            String::from_utf8_lossy(&found[4..]).trim_end_matches('\0').to_string(),
        ));
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FeatureIoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(FeatureIoError::TruncatedFile(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FeatureIoError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FeatureIoError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FeatureIoError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, FeatureIoError> {
        Ok(f32::from_bits(self.u32(what)?))
    }

    fn string(&mut self, what: &'static str) -> Result<String, FeatureIoError> {
        let n = usize::from(self.u16(what)?);
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| violation(format!("{what} is not UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn is_done(&self) -> bool {
        self.remaining() == 0
    }
}

/// Euclidean distance accumulated in double precision.
#[inline]
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        acc += d * d;
    }
    acc.sqrt()
}

#[inline]
pub fn hamming_distance(a: &[u8], b: &[u8]) -> u32 {
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    let mut total = 0u32;
    for (x, y) in (&mut ca).zip(&mut cb) {
        let x = u64::from_le_bytes(x.try_into().expect("8-byte chunk"));
        let y = u64::from_le_bytes(y.try_into().expect("8-byte chunk"));
        total += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        total += (x ^ y).count_ones();
    }
    total
}

/// Distance between two descriptor rows. L2 applies only to float rows and
/// Hamming only to packed binary rows.
pub fn distance(a: DescriptorRow<'_>, b: DescriptorRow<'_>, metric: Metric) -> Result<f64, FeatureIoError> {
    match (a, b, metric) {
        (DescriptorRow::Float(x), DescriptorRow::Float(y), Metric::L2) => {
            if x.len() != y.len() {
                return Err(FeatureIoError::DimensionMismatch(x.len(), y.len()));
            }
            Ok(l2_distance(x, y))
        }
        (DescriptorRow::Binary(x), DescriptorRow::Binary(y), Metric::Hamming) => {
            if x.len() != y.len() {
                return Err(FeatureIoError::DimensionMismatch(x.len() * 8, y.len() * 8));
            }
            Ok(f64::from(hamming_distance(x, y)))
        }
        (a, b, metric) => {
            let kind = if a.kind() == b.kind() {
                a.kind()
            } else {
                // mixed kinds: report whichever side the metric cannot handle
                match metric {
                    Metric::L2 => DescriptorKind::PackedBinary,
                    Metric::Hamming => DescriptorKind::Float32,
                }
            };
            Err(FeatureIoError::MetricMismatch { metric, kind })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn float_set(rows: usize, dim: usize) -> FeatureSet {
        let keypoints = (0..rows)
            .map(|i| Keypoint {
                x: i as f32 * 1.5,
                y: 2.0 + i as f32,
                scale: 4.0,
                angle: if i % 2 == 0 { f32::NAN } else { 1.25 },
                score: 0.5 + i as f32,
            })
            .collect();
        let data = (0..rows * dim).map(|i| (i as f32).sin()).collect();
        FeatureSet {
            image_id: "seq_1".into(),
            image_size: (640, 480),
            keypoints,
            descriptors: DescriptorMatrix::Float32 { dim, data },
        }
    }

    fn binary_set(rows: usize, dim: usize) -> FeatureSet {
        let stride = dim.div_ceil(8);
        let mut data: Vec<u8> = (0..rows * stride).map(|i| (i * 37 % 251) as u8).collect();
        if !dim.is_multiple_of(8) {
            let mask = (1u8 << (dim % 8)) - 1;
            for r in 0..rows {
                data[r * stride + stride - 1] &= mask;
            }
        }
        FeatureSet {
            image_id: "bin".into(),
            image_size: (1000, 1000),
            keypoints: (0..rows)
                .map(|i| Keypoint::at((i % 1000) as f32, (i / 1000) as f32))
                .collect(),
            descriptors: DescriptorMatrix::PackedBinary { dim, data },
        }
    }

    #[test]
    fn float_round_trip_binary_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let f = float_set(3, 128);
        for name in ["a.feat", "a.json"] {
            let p = dir.path().join(name);
            save_features(&f, &p).unwrap();
            assert_eq!(load_features(&p).unwrap(), f, "{name}");
        }
    }

    #[test]
    fn packed_round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let f = binary_set(1000, 256);
        let p = dir.path().join("b.feat");
        save_features(&f, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        // magic + kind + reserved + (u16 + "bin") + width + height + rows + dim
        let header = 8 + 1 + 3 + (2 + 3) + 4 * 4;
        assert_eq!(bytes.len(), header + 1000 * 20 + 1000 * 32);
        assert_eq!(load_features(&p).unwrap(), f);
        assert_eq!(f.to_bytes().unwrap(), bytes, "serialization is canonical");
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let mut bytes = float_set(2, 4).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            FeatureSet::from_bytes(&bad),
            Err(FeatureIoError::BadMagic { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4..6].copy_from_slice(b"v2");
        assert!(matches!(
            FeatureSet::from_bytes(&v2),
            Err(FeatureIoError::VersionUnsupported(v)) if v == "v2"
        ));
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            FeatureSet::from_bytes(&bytes),
            Err(FeatureIoError::TruncatedFile("descriptors"))
        ));
        assert!(matches!(
            FeatureSet::from_bytes(b"FEA"),
            Err(FeatureIoError::TruncatedFile("magic"))
        ));
    }

    #[test]
    fn invariants_are_enforced() {
        let mut f = float_set(2, 4);
        f.keypoints[1].x = 700.0;
        assert!(matches!(f.to_bytes(), Err(FeatureIoError::InvariantViolation(_))));

        let mut f = float_set(2, 4);
        f.keypoints[0].angle = 7.0;
        assert!(matches!(f.validate(), Err(FeatureIoError::InvariantViolation(_))));

        let mut f = binary_set(2, 12);
        if let DescriptorMatrix::PackedBinary { data, .. } = &mut f.descriptors {
            data[1] |= 0x80;
        }
        assert!(matches!(f.validate(), Err(FeatureIoError::InvariantViolation(_))));

        let mut f = float_set(2, 4);
        f.keypoints.pop();
        assert!(matches!(f.validate(), Err(FeatureIoError::InvariantViolation(_))));
    }

    #[test]
    fn keypoint_bounds_are_half_pixel_inclusive() {
        let mut f = float_set(1, 2);
        f.keypoints[0].x = -0.5;
        f.keypoints[0].y = 479.5;
        f.validate().unwrap();
        f.keypoints[0].y = 479.51;
        assert!(f.validate().is_err());
    }

    #[test]
    fn scored_match_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ScoredMatchFile {
            image_id_a: "v_x_1".into(),
            image_id_b: "v_x_2".into(),
            entries: vec![
                ScoredMatch { x1: 1.0, y1: 2.0, x2: 3.5, y2: 4.25, confidence: 0.9 },
                ScoredMatch { x1: 0.0, y1: 0.0, x2: 10.0, y2: 11.0, confidence: 0.0 },
            ],
        };
        for name in ["m.mtch", "m.json"] {
            let p = dir.path().join(name);
            save_scored_matches(&m, &p).unwrap();
            assert_eq!(load_scored_matches(&p).unwrap(), m);
        }
        let empty = ScoredMatchFile {
            image_id_a: "a".into(),
            image_id_b: "b".into(),
            entries: vec![],
        };
        let p = dir.path().join("e.mtch");
        save_scored_matches(&empty, &p).unwrap();
        assert_eq!(load_scored_matches(&p).unwrap(), empty);
    }

    #[test]
    fn scored_match_confidence_out_of_range() {
        let m = ScoredMatchFile {
            image_id_a: "a".into(),
            image_id_b: "b".into(),
            entries: vec![ScoredMatch { x1: 0.0, y1: 0.0, x2: 0.0, y2: 0.0, confidence: 1.5 }],
        };
        assert!(matches!(m.to_bytes(), Err(FeatureIoError::InvariantViolation(_))));
        // bypass the writer to check the reader too
        let mut bytes = ScoredMatchFile { entries: vec![], ..m.clone() }.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&1u32.to_le_bytes());
        for v in [0.0f32, 0.0, 0.0, 0.0, 1.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            ScoredMatchFile::from_bytes(&bytes),
            Err(FeatureIoError::InvariantViolation(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let d = distance(DescriptorRow::Float(&[0.0, 3.0]), DescriptorRow::Float(&[4.0, 0.0]), Metric::L2).unwrap();
        assert_eq!(d, 5.0);
        let d = distance(DescriptorRow::Binary(&[0xFF]), DescriptorRow::Binary(&[0x0F]), Metric::Hamming).unwrap();
        assert_eq!(d, 4.0);
        let v: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).cos()).collect();
        assert_eq!(l2_distance(&v, &v), 0.0);
        assert!(matches!(
            distance(DescriptorRow::Binary(&[1]), DescriptorRow::Binary(&[1]), Metric::L2),
            Err(FeatureIoError::MetricMismatch { metric: Metric::L2, kind: DescriptorKind::PackedBinary })
        ));
        assert!(matches!(
            distance(DescriptorRow::Float(&[1.0]), DescriptorRow::Float(&[1.0, 2.0]), Metric::L2),
            Err(FeatureIoError::DimensionMismatch(1, 2))
        ));
    }

    fn brute_force_hamming(a: &[u8], b: &[u8]) -> u32 {
        let mut n = 0;
        for i in 0..a.len() * 8 {
            let bit = |row: &[u8]| (row[i / 8] >> (i % 8)) & 1;
            if bit(a) != bit(b) {
                n += 1;
            }
        }
        n
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn hamming_matches_bit_loop(a in proptest::collection::vec(any::<u8>(), 37), b in proptest::collection::vec(any::<u8>(), 37)) {
            prop_assert_eq!(hamming_distance(&a, &b), brute_force_hamming(&a, &b));
        }

        #[test]
        fn l2_is_a_metric(
            a in proptest::collection::vec(-10.0f32..10.0, 16),
            b in proptest::collection::vec(-10.0f32..10.0, 16),
            c in proptest::collection::vec(-10.0f32..10.0, 16),
        ) {
            let (ab, bc, ac) = (l2_distance(&a, &b), l2_distance(&b, &c), l2_distance(&a, &c));
            prop_assert_eq!(ab, l2_distance(&b, &a));
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(l2_distance(&a, &a), 0.0);
        }

        #[test]
        fn hamming_is_a_metric(
            a in proptest::collection::vec(any::<u8>(), 32),
            b in proptest::collection::vec(any::<u8>(), 32),
            c in proptest::collection::vec(any::<u8>(), 32),
        ) {
            let (ab, bc, ac) = (hamming_distance(&a, &b), hamming_distance(&b, &c), hamming_distance(&a, &c));
            prop_assert_eq!(ab, hamming_distance(&b, &a));
            prop_assert!(ac <= ab + bc);
            prop_assert_eq!(ab == 0, a == b);
        }

        #[test]
        fn float_files_round_trip(rows in 0usize..20, dim in 1usize..40, seed in any::<u32>()) {
            let mut f = float_set(rows, dim);
            if let DescriptorMatrix::Float32 { data, .. } = &mut f.descriptors {
                for (i, v) in data.iter_mut().enumerate() {
                    *v = f32::from_bits(seed.wrapping_add((i as u32).wrapping_mul(2654435761)) & 0x7F7F_FFFF);
                }
            }
            let bytes = f.to_bytes().unwrap();
            prop_assert_eq!(FeatureSet::from_bytes(&bytes).unwrap(), f);
        }
    }
}
