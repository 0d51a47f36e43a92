//! Detection file input: MOT-style CSV rows plus a binary feature sidecar.
//!
//! The CSV holds `frame,id,x,y,w,h,conf` with 0-based frames. Row `k` of the
//! sidecar (`<name>.feat`) holds the appearance feature of CSV row `k`:
//!
//! ```text
//! b"MTFT" | rows: u32 LE | dim: u32 LE | rows * dim * f32 LE
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::ids::CameraId;

pub const DETECTION_HEADER: &str = "frame,id,x,y,w,h,conf";
pub const FEATURE_MAGIC: &[u8; 4] = b"MTFT";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("feature row {row}: expected dimension {expected}, found {found}")]
    Dimension {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: frame {frame} outside clip of {frame_count} frames")]
    FrameRange {
        line: usize,
        frame: u32,
        frame_count: u32,
    },
    #[error("invalid feature file: {0}")]
    FeatureFile(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("camera metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One detected box at one frame of one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub camera_id: CameraId,
    pub frame: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub feature: Vec<f32>,
    /// Unique within the camera. Taken from the `id` column, or the row
    /// index when the column holds `-1`.
    pub detection_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Key-frame stride in frames.
    pub interval: u32,
    pub fps: f64,
    pub confidence_threshold: f64,
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(IngestError::Config("interval must be >= 1".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(IngestError::Config("fps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(IngestError::Config(
                "confidence threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            interval: 1,
            fps: 10.0,
            confidence_threshold: 0.1,
        }
    }
}

/// Per-camera clip description, stored as one JSON document per camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraVideoMeta {
    pub camera_id: CameraId,
    pub clip_uri: String,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

impl CameraVideoMeta {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })?;
        let meta: Self = serde_json::from_str(&text)?;
        if meta.frame_count == 0 || meta.width == 0 || meta.height == 0 || !(meta.fps > 0.0) {
            return Err(IngestError::Config(format!(
                "camera {} has empty clip geometry",
                meta.camera_id
            )));
        }
        Ok(meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }
}

/// Sidecar path for a detection CSV: same stem, `.feat` extension.
pub fn feature_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("feat")
}

/// Reads a detection CSV and its feature sidecar.
///
/// When `expected_dim` is given, the sidecar dimension must match it.
pub fn parse_detections(
    csv_path: &Path,
    meta: &CameraVideoMeta,
    expected_dim: Option<usize>,
) -> Result<Vec<Detection>> {
    let read_err = |path: &Path| {
        let path = path.to_owned();
        move |source| IngestError::Io { path, source }
    };
    let csv = fs::read_to_string(csv_path).map_err(read_err(csv_path))?;
    let feat_path = feature_path(csv_path);
    let features = fs::read(&feat_path).map_err(read_err(&feat_path))?;
    parse_detections_from(&csv, &features, meta, expected_dim)
}

/// In-memory variant of [`parse_detections`].
pub fn parse_detections_from(
    csv: &str,
    features: &[u8],
    meta: &CameraVideoMeta,
    expected_dim: Option<usize>,
) -> Result<Vec<Detection>> {
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == DETECTION_HEADER => {}
        Some((_, header)) => {
            return Err(IngestError::Format {
                line: 1,
                message: format!("expected header {DETECTION_HEADER:?}, found {header:?}"),
            })
        }
        None => {
            return Err(IngestError::Format {
                line: 1,
                message: "missing header".into(),
            })
        }
    }

    let matrix = FeatureMatrix::decode(features)?;
    if let Some(expected) = expected_dim {
        if matrix.dim != expected {
            return Err(IngestError::Dimension {
                row: 0,
                expected,
                found: matrix.dim,
            });
        }
    }

    let (w, h) = (meta.width as f64, meta.height as f64);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut row = 0usize;
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec = parse_row(raw, line)?;
        if rec.frame >= meta.frame_count {
            return Err(IngestError::FrameRange {
                line,
                frame: rec.frame,
                frame_count: meta.frame_count,
            });
        }
        let feature = matrix.row(row).ok_or(IngestError::Dimension {
            row,
            expected: matrix.dim,
            found: 0,
        })?;
        let detection_id = match rec.id {
            -1 => row as u32,
            id if id >= 0 && id <= u32::MAX as i64 => id as u32,
            id => {
                return Err(IngestError::Format {
                    line,
                    message: format!("invalid detection id {id}"),
                })
            }
        };
        if !seen.insert(detection_id) {
            return Err(IngestError::Format {
                line,
                message: format!("duplicate detection id {detection_id}"),
            });
        }
        out.push(Detection {
            camera_id: meta.camera_id.clone(),
            frame: rec.frame,
            bbox: rec.bbox.clamp_to(w, h),
            confidence: rec.confidence,
            feature: feature.to_vec(),
            detection_id,
        });
        row += 1;
    }
    if row != matrix.rows() {
        return Err(IngestError::Dimension {
            row,
            expected: matrix.dim,
            found: 0,
        });
    }
    out.sort_by_key(|d| (d.frame, d.detection_id));
    Ok(out)
}

struct Row {
    frame: u32,
    id: i64,
    bbox: BoundingBox,
    confidence: f64,
}

fn parse_row(raw: &str, line: usize) -> Result<Row> {
    let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
    let bad = |message: String| IngestError::Format { line, message };
    if fields.len() != 7 {
        return Err(bad(format!("expected 7 fields, found {}", fields.len())));
    }
    let frame: u32 = fields[0]
        .parse()
        .map_err(|_| bad(format!("invalid frame {:?}", fields[0])))?;
    let id: i64 = fields[1]
        .parse()
        .map_err(|_| bad(format!("invalid id {:?}", fields[1])))?;
    let mut nums = [0.0f64; 5];
    for (slot, text) in nums.iter_mut().zip(&fields[2..]) {
        *slot = text
            .parse()
            .map_err(|_| bad(format!("invalid number {text:?}")))?;
    }
    let [x, y, w, h, confidence] = nums;
    let bbox = BoundingBox::from_xywh(x, y, w, h)
        .ok_or_else(|| bad(format!("invalid box {x},{y},{w},{h}")))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(bad(format!("confidence {confidence} outside [0, 1]")));
    }
    Ok(Row {
        frame,
        id,
        bbox,
        confidence,
    })
}

/// Decoded sidecar feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, k: usize) -> Option<&[f32]> {
        self.data.get(k * self.dim..(k + 1) * self.dim)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
            return Err(IngestError::FeatureFile("missing MTFT header".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| IngestError::FeatureFile("size overflow".into()))?;
        if body.len() != expected {
            return Err(IngestError::FeatureFile(format!(
                "{rows} rows of dimension {dim} need {expected} bytes, found {}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dim, data })
    }
}

/// Encodes feature rows; every row must have length `dim`.
pub fn encode_features<R: AsRef<[f32]>>(rows: &[R], dim: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + rows.len() * dim * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (k, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(IngestError::Dimension {
                row: k,
                expected: dim,
                found: r.len(),
            });
        }
        for v in r {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Width such that `lo + w` reproduces `hi` exactly in f64, when one exists
/// within a few ulps of `hi - lo`.
fn exact_extent(lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if lo + w == hi {
        return w;
    }
    let mut cand = w;
    for _ in 0..8 {
        cand = if lo + cand < hi {
            cand.next_up()
        } else {
            cand.next_down()
        };
        if lo + cand == hi {
            return cand;
        }
    }
    w
}

/// Nearest box that survives the `x,y,w,h` file layout bit-exactly.
///
/// Not every `x2` can be written as `x1 + w` in floating point; this moves
/// `x2` and `y2` by at most an ulp or so to a value that can.
pub fn representable(b: &BoundingBox) -> BoundingBox {
    let snap = |lo: f64, hi: f64| {
        let w = exact_extent(lo, hi);
        lo + w
    };
    BoundingBox {
        x1: b.x1,
        y1: b.y1,
        x2: snap(b.x1, b.x2),
        y2: snap(b.y1, b.y2),
    }
}

/// Serializes detections to CSV text and feature bytes.
pub fn encode_detections(dets: &[Detection]) -> Result<(String, Vec<u8>)> {
    let dim = dets.first().map_or(0, |d| d.feature.len());
    let mut csv = String::with_capacity(32 * (dets.len() + 1));
    csv.push_str(DETECTION_HEADER);
    csv.push('\n');
    for d in dets {
        let b = &d.bbox;
        let w = exact_extent(b.x1, b.x2);
        let h = exact_extent(b.y1, b.y2);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            d.frame, d.detection_id, b.x1, b.y1, w, h, d.confidence
        ));
    }
    let rows: Vec<&[f32]> = dets.iter().map(|d| d.feature.as_slice()).collect();
    let features = encode_features(&rows, dim)?;
    Ok((csv, features))
}

/// Writes `path` and its `.feat` sidecar.
pub fn write_detections(csv_path: &Path, dets: &[Detection]) -> Result<()> {
    let (csv, features) = encode_detections(dets)?;
    let write = |path: &Path, bytes: &[u8]| {
        fs::write(path, bytes).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })
    };
    write(csv_path, csv.as_bytes())?;
    write(&feature_path(csv_path), &features)
}

/// Keeps key frames (`frame % interval == 0`) whose confidence reaches the
/// threshold. Input order is preserved.
pub fn sample_and_filter(dets: &[Detection], cfg: &SamplingConfig) -> Vec<Detection> {
    let interval = cfg.interval.max(1);
    dets.iter()
        .filter(|d| d.frame % interval == 0 && d.confidence >= cfg.confidence_threshold)
        .cloned()
        .collect()
}

/// Detections of one key frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyFrame {
    pub frame: u32,
    pub detections: Vec<Detection>,
}

/// Groups detections into every key frame `0, f, 2f, .. < frame_count`,
/// including key frames without detections. Non-key-frame detections are
/// ignored.
pub fn key_frames(dets: &[Detection], interval: u32, frame_count: u32) -> Vec<KeyFrame> {
    let interval = interval.max(1);
    let mut frames: Vec<KeyFrame> = (0..frame_count)
        .step_by(interval as usize)
        .map(|frame| KeyFrame {
            frame,
            detections: Vec::new(),
        })
        .collect();
    for d in dets {
        if d.frame % interval == 0 && d.frame < frame_count {
            frames[(d.frame / interval) as usize].detections.push(d.clone());
        }
    }
    frames
}
