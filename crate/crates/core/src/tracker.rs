//! Single-camera trajectory generation.
//!
//! [`associate`] links key-frame detections into tracks with an optimal
//! bipartite assignment per consecutive key-frame pair. The cost of pairing
//! a track with a detection is
//!
//! ```text
//! lambda * (1 - IoU) + (1 - lambda) * cosine_distance
//! ```
//!
//! and pairs below `gate_iou` or above `gate_cos` are never matched. Key
//! frames a track misses before being re-matched are filled by linear
//! interpolation, so the key-frame boxes of every output track are
//! consecutive. [`interpolate`] then densifies the track to every frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_matching;
use crate::geometry::{cosine_distance, l2_normalize, BoundingBox};
use crate::ids::{CameraId, TrajRef};
use crate::ingest::KeyFrame;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrackError {
    #[error("detections from cameras {expected} and {found} in one tracking job")]
    InconsistentCamera { expected: CameraId, found: CameraId },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("cannot aggregate an empty feature set")]
    EmptyFeatures,
    #[error("trajectory {trajectory_id}: key frame {frame} is not followed by key frame {expected_next}")]
    Gap {
        trajectory_id: u64,
        frame: u32,
        expected_next: u32,
    },
    #[error("trajectory {trajectory_id}: frame {frame} is not a multiple of interval {interval}")]
    Misaligned {
        trajectory_id: u64,
        frame: u32,
        interval: u32,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrackError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// Weight of the motion (IoU) term against the appearance term.
    pub lambda: f64,
    /// Minimum IoU for a pair to be matchable.
    pub gate_iou: f64,
    /// Maximum cosine distance for a pair to be matchable.
    pub gate_cos: f64,
    /// Key frames a track may stay unmatched before it is closed.
    pub max_age: u32,
    /// Trajectories shorter than this (seconds) are dropped.
    pub min_duration_s: f64,
    /// Trajectories whose first and last boxes overlap more than this are
    /// treated as static and dropped.
    pub static_iou_threshold: f64,
    /// L2-normalize frame features before averaging them.
    pub normalize_features: bool,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            gate_iou: 0.1,
            gate_cos: 0.4,
            max_age: 3,
            min_duration_s: 1.0,
            static_iou_threshold: 0.05,
            normalize_features: false,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(TrackError::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("lambda", self.lambda)?;
        unit("gate_iou", self.gate_iou)?;
        unit("gate_cos", self.gate_cos)?;
        unit("static_iou_threshold", self.static_iou_threshold)?;
        if !(self.min_duration_s >= 0.0) {
            return Err(TrackError::Config("min_duration_s must be >= 0".into()));
        }
        Ok(())
    }
}

/// Boxes of one vehicle under one camera, keyed by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TrajectoryLine", from = "TrajectoryLine")]
pub struct Trajectory {
    pub trajectory_id: u64,
    pub camera_id: CameraId,
    pub boxes: BTreeMap<u32, BoundingBox>,
    /// Seconds, first frame / fps.
    pub start_time: f64,
    /// Seconds, last frame / fps.
    pub end_time: f64,
    /// Mean of `frame_features`.
    pub feature: Vec<f64>,
    /// Features of the matched detections, in frame order. Not part of the
    /// JSON-lines form, so empty for trajectories read back from disk.
    pub frame_features: Vec<Vec<f32>>,
    /// Unit image-plane heading, or zero for a non-moving track.
    pub orientation: [f64; 2],
}

impl Trajectory {
    pub fn traj_ref(&self) -> TrajRef {
        TrajRef {
            camera_id: self.camera_id.clone(),
            trajectory_id: self.trajectory_id,
        }
    }

    pub fn first_frame(&self) -> Option<u32> {
        self.boxes.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<u32> {
        self.boxes.keys().next_back().copied()
    }

    pub fn first_box(&self) -> Option<&BoundingBox> {
        self.boxes.values().next()
    }

    pub fn last_box(&self) -> Option<&BoundingBox> {
        self.boxes.values().next_back()
    }

    pub fn n_key_frames(&self) -> usize {
        self.frame_features.len()
    }

    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }

    /// True when boxes cover every frame between the first and the last.
    pub fn is_dense(&self) -> bool {
        match (self.first_frame(), self.last_frame()) {
            (Some(a), Some(b)) => (b - a) as usize + 1 == self.boxes.len(),
            _ => false,
        }
    }
}

/// On-disk JSON-lines form of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub trajectory_id: u64,
    pub camera_id: CameraId,
    pub st: f64,
    pub et: f64,
    pub boxes: Vec<[f64; 5]>,
    pub feature: Vec<f64>,
    pub orientation: [f64; 2],
}

impl From<Trajectory> for TrajectoryLine {
    fn from(t: Trajectory) -> Self {
        Self {
            trajectory_id: t.trajectory_id,
            camera_id: t.camera_id,
            st: t.start_time,
            et: t.end_time,
            boxes: t
                .boxes
                .iter()
                .map(|(&f, b)| [f as f64, b.x1, b.y1, b.x2, b.y2])
                .collect(),
            feature: t.feature,
            orientation: t.orientation,
        }
    }
}

impl From<TrajectoryLine> for Trajectory {
    fn from(l: TrajectoryLine) -> Self {
        Self {
            trajectory_id: l.trajectory_id,
            camera_id: l.camera_id,
            boxes: l
                .boxes
                .iter()
                .map(|r| (r[0] as u32, BoundingBox::from_array([r[1], r[2], r[3], r[4]])))
                .collect(),
            start_time: l.st,
            end_time: l.et,
            feature: l.feature,
            frame_features: Vec::new(),
            orientation: l.orientation,
        }
    }
}

/// Writes one trajectory per line.
pub fn write_trajectories(trajs: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajs {
        out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

pub fn read_trajectories(text: &str) -> serde_json::Result<Vec<Trajectory>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Coordinate-wise mean of the frame features.
pub fn aggregate_feature<V: AsRef<[f32]>>(frame_features: &[V]) -> Result<Vec<f64>> {
    let first = frame_features.first().ok_or(TrackError::EmptyFeatures)?;
    let dim = first.as_ref().len();
    let mut sum = vec![0.0f64; dim];
    for f in frame_features {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(TrackError::Dimension {
                expected: dim,
                found: f.len(),
            });
        }
        for (s, &x) in sum.iter_mut().zip(f) {
            *s += x as f64;
        }
    }
    let n = frame_features.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

fn trajectory_feature(frame_features: &[Vec<f32>], normalize: bool) -> Result<Vec<f64>> {
    if !normalize {
        return aggregate_feature(frame_features);
    }
    let normalized: Vec<Vec<f32>> = frame_features
        .iter()
        .map(|f| {
            let mut v: Vec<f64> = f.iter().map(|&x| x as f64).collect();
            l2_normalize(&mut v);
            v.into_iter().map(|x| x as f32).collect()
        })
        .collect();
    aggregate_feature(&normalized)
}

/// Heading from the first box center to the last, normalized.
pub fn compute_orientation(traj: &Trajectory) -> [f64; 2] {
    orientation_between(traj.first_box(), traj.last_box())
}

fn orientation_between(first: Option<&BoundingBox>, last: Option<&BoundingBox>) -> [f64; 2] {
    let (Some(a), Some(b)) = (first, last) else {
        return [0.0, 0.0];
    };
    let (ca, cb) = (a.center(), b.center());
    let (dx, dy) = (cb[0] - ca[0], cb[1] - ca[1]);
    let norm = dx.hypot(dy);
    if norm < 1e-6 {
        [0.0, 0.0]
    } else {
        [dx / norm, dy / norm]
    }
}

struct Track {
    id: u64,
    boxes: BTreeMap<u32, BoundingBox>,
    features: Vec<Vec<f32>>,
    last_frame: u32,
    last_box: BoundingBox,
    /// Key frames passed since the last match.
    missed: Vec<u32>,
}

impl Track {
    fn extend(&mut self, frame: u32, bbox: BoundingBox, feature: Vec<f32>) {
        let span = (frame - self.last_frame) as f64;
        for &gap in &self.missed {
            let t = (gap - self.last_frame) as f64 / span;
            self.boxes.insert(gap, self.last_box.lerp(&bbox, t));
        }
        self.missed.clear();
        self.boxes.insert(frame, bbox);
        self.features.push(feature);
        self.last_frame = frame;
        self.last_box = bbox;
    }

    fn finish(self, camera_id: &CameraId, fps: f64, normalize: bool) -> Result<Trajectory> {
        let feature = trajectory_feature(&self.features, normalize)?;
        let first = *self.boxes.keys().next().expect("track has a box");
        let orientation = orientation_between(self.boxes.values().next(), self.boxes.values().next_back());
        Ok(Trajectory {
            trajectory_id: self.id,
            camera_id: camera_id.clone(),
            start_time: first as f64 / fps,
            end_time: self.last_frame as f64 / fps,
            boxes: self.boxes,
            feature,
            frame_features: self.features,
            orientation,
        })
    }
}

/// Links key-frame detections of one camera into trajectories.
///
/// `frames` must be ordered by frame and should contain every key frame,
/// including empty ones, since track ageing counts key frames. The returned
/// trajectories hold key-frame boxes only and are ordered by id (birth
/// order, starting at 1).
pub fn associate(frames: &[KeyFrame], cfg: &AssociationConfig, fps: f64) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if !(fps > 0.0) {
        return Err(TrackError::Config("fps must be positive".into()));
    }
    let mut camera: Option<CameraId> = None;
    let mut dim: Option<usize> = None;
    for d in frames.iter().flat_map(|k| &k.detections) {
        match &camera {
            None => camera = Some(d.camera_id.clone()),
            Some(c) if *c != d.camera_id => {
                return Err(TrackError::InconsistentCamera {
                    expected: c.clone(),
                    found: d.camera_id.clone(),
                })
            }
            _ => {}
        }
        match dim {
            None => dim = Some(d.feature.len()),
            Some(n) if n != d.feature.len() => {
                return Err(TrackError::Dimension {
                    expected: n,
                    found: d.feature.len(),
                })
            }
            _ => {}
        }
    }
    let Some(camera) = camera else {
        return Ok(Vec::new());
    };

    let mut next_id = 1u64;
    let mut active: Vec<Track> = Vec::new();
    let mut done: Vec<Track> = Vec::new();
    // Appearance reference per track: feature of its latest match.
    let mut last_feature: Vec<Vec<f32>> = Vec::new();

    for kf in frames {
        let dets = &kf.detections;
        let costs: Vec<Vec<Option<f64>>> = active
            .iter()
            .zip(&last_feature)
            .map(|(track, feat)| {
                dets.iter()
                    .map(|d| {
                        let iou = track.last_box.iou(&d.bbox);
                        let cos = cosine_distance(feat, &d.feature);
                        (iou >= cfg.gate_iou && cos <= cfg.gate_cos)
                            .then_some(cfg.lambda * (1.0 - iou) + (1.0 - cfg.lambda) * cos)
                    })
                    .collect()
            })
            .collect();
        let matches = min_cost_matching(&costs);

        let mut track_matched = vec![false; active.len()];
        let mut det_matched = vec![false; dets.len()];
        for &(t, d) in &matches {
            track_matched[t] = true;
            det_matched[d] = true;
            active[t].extend(kf.frame, dets[d].bbox, dets[d].feature.clone());
            last_feature[t] = dets[d].feature.clone();
        }

        let mut kept = Vec::with_capacity(active.len());
        let mut kept_feat = Vec::with_capacity(active.len());
        for ((mut track, feat), matched) in active.drain(..).zip(last_feature.drain(..)).zip(track_matched) {
            if !matched {
                track.missed.push(kf.frame);
                if track.missed.len() as u32 > cfg.max_age {
                    done.push(track);
                    continue;
                }
            }
            kept.push(track);
            kept_feat.push(feat);
        }
        active = kept;
        last_feature = kept_feat;

        for (det, _) in dets.iter().zip(&det_matched).filter(|(_, &m)| !m) {
            let mut boxes = BTreeMap::new();
            boxes.insert(kf.frame, det.bbox);
            active.push(Track {
                id: next_id,
                boxes,
                features: vec![det.feature.clone()],
                last_frame: kf.frame,
                last_box: det.bbox,
                missed: Vec::new(),
            });
            last_feature.push(det.feature.clone());
            next_id += 1;
        }
    }
    done.extend(active);
    done.sort_by_key(|t| t.id);
    done.into_iter()
        .map(|t| t.finish(&camera, fps, cfg.normalize_features))
        .collect()
}

/// Fills every frame between consecutive key frames `i` and `i + f` with
/// `b_i + ((j - i) / f) * (b_{i+f} - b_i)`. Key-frame boxes are copied
/// unchanged and nothing is extrapolated past the first or last key frame.
pub fn interpolate(traj: &Trajectory, interval: u32) -> Result<Trajectory> {
    if interval == 0 {
        return Err(TrackError::Config("interval must be >= 1".into()));
    }
    let mut dense = BTreeMap::new();
    let mut prev: Option<(u32, BoundingBox)> = None;
    for (&frame, &bbox) in &traj.boxes {
        if frame % interval != 0 {
            return Err(TrackError::Misaligned {
                trajectory_id: traj.trajectory_id,
                frame,
                interval,
            });
        }
        if let Some((i, bi)) = prev {
            if frame != i + interval {
                return Err(TrackError::Gap {
                    trajectory_id: traj.trajectory_id,
                    frame: i,
                    expected_next: i + interval,
                });
            }
            let f = interval as f64;
            for j in i + 1..frame {
                dense.insert(j, bi.lerp(&bbox, (j - i) as f64 / f));
            }
        }
        dense.insert(frame, bbox);
        prev = Some((frame, bbox));
    }
    Ok(Trajectory {
        boxes: dense,
        ..traj.clone()
    })
}

/// Drops trajectories that are too short or that barely moved.
pub fn filter_trajectories(trajs: &[Trajectory], cfg: &AssociationConfig) -> Vec<Trajectory> {
    trajs
        .iter()
        .filter(|t| t.duration() >= cfg.min_duration_s)
        .filter(|t| match (t.first_box(), t.last_box()) {
            (Some(a), Some(b)) => a.iou(b) <= cfg.static_iou_threshold,
            _ => false,
        })
        .cloned()
        .collect()
}

/// Runs association, interpolation and filtering for one camera.
pub fn track_camera(
    frames: &[KeyFrame],
    interval: u32,
    cfg: &AssociationConfig,
    fps: f64,
) -> Result<Vec<Trajectory>> {
    let sparse = associate(frames, cfg, fps)?;
    let dense = sparse
        .iter()
        .map(|t| {
            let mut d = interpolate(t, interval)?;
            d.orientation = compute_orientation(&d);
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(filter_trajectories(&dense, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Detection;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(frame: u32, id: u32, bbox: BoundingBox, feature: Vec<f32>) -> Detection {
        Detection {
            camera_id: CameraId::new("c1"),
            frame,
            bbox,
            confidence: 0.9,
            feature,
            detection_id: id,
        }
    }

    fn traj(boxes: &[(u32, BoundingBox)], fps: f64) -> Trajectory {
        let boxes: BTreeMap<_, _> = boxes.iter().copied().collect();
        let first = *boxes.keys().next().unwrap();
        let last = *boxes.keys().last().unwrap();
        Trajectory {
            trajectory_id: 1,
            camera_id: CameraId::new("c1"),
            boxes,
            start_time: first as f64 / fps,
            end_time: last as f64 / fps,
            feature: vec![1.0],
            frame_features: vec![vec![1.0]],
            orientation: [0.0, 0.0],
        }
    }

    #[test]
    fn two_stationary_targets() {
        let frames: Vec<KeyFrame> = (0..10)
            .map(|f| KeyFrame {
                frame: f,
                detections: vec![
                    det(f, 2 * f, bb(0.0, 0.0, 10.0, 10.0), vec![1.0, 0.0]),
                    det(f, 2 * f + 1, bb(100.0, 100.0, 110.0, 110.0), vec![0.0, 1.0]),
                ],
            })
            .collect();
        let out = associate(&frames, &AssociationConfig::default(), 10.0).unwrap();
        assert_eq!(out.len(), 2);
        for t in &out {
            assert_eq!(t.boxes.len(), 10);
            assert_eq!(t.n_key_frames(), 10);
        }
        assert_eq!(out[0].boxes[&5], bb(0.0, 0.0, 10.0, 10.0));
        assert_eq!(out[1].boxes[&5], bb(100.0, 100.0, 110.0, 110.0));
    }

    #[test]
    fn single_detection_birth_and_death() {
        let mut frames = vec![KeyFrame {
            frame: 0,
            detections: vec![det(0, 0, bb(0.0, 0.0, 5.0, 5.0), vec![1.0])],
        }];
        frames.extend((1..5).map(|f| KeyFrame {
            frame: f,
            detections: vec![],
        }));
        let cfg = AssociationConfig {
            max_age: 1,
            ..Default::default()
        };
        let out = associate(&frames, &cfg, 10.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].boxes.len(), 1);
        assert_eq!(out[0].start_time, 0.0);
        assert_eq!(out[0].end_time, 0.0);
    }

    #[test]
    fn missed_key_frames_are_filled() {
        let b = |x: f64| bb(x, 0.0, x + 20.0, 20.0);
        let frames = vec![
            KeyFrame { frame: 0, detections: vec![det(0, 0, b(0.0), vec![1.0])] },
            KeyFrame { frame: 2, detections: vec![] },
            KeyFrame { frame: 4, detections: vec![det(4, 1, b(8.0), vec![1.0])] },
        ];
        let out = associate(&frames, &AssociationConfig::default(), 10.0).unwrap();
        assert_eq!(out.len(), 1);
        let keys: Vec<u32> = out[0].boxes.keys().copied().collect();
        assert_eq!(keys, vec![0, 2, 4]);
        assert_eq!(out[0].boxes[&2], b(4.0));
        assert_eq!(out[0].n_key_frames(), 2);
        assert!(interpolate(&out[0], 2).is_ok());
    }

    #[test]
    fn mixed_cameras_rejected() {
        let mut other = det(1, 1, bb(0.0, 0.0, 1.0, 1.0), vec![1.0]);
        other.camera_id = CameraId::new("c2");
        let frames = vec![
            KeyFrame { frame: 0, detections: vec![det(0, 0, bb(0.0, 0.0, 1.0, 1.0), vec![1.0])] },
            KeyFrame { frame: 1, detections: vec![other] },
        ];
        assert!(matches!(
            associate(&frames, &AssociationConfig::default(), 10.0),
            Err(TrackError::InconsistentCamera { .. })
        ));
    }

    #[test]
    fn appearance_gate_blocks_match() {
        let frames = vec![
            KeyFrame { frame: 0, detections: vec![det(0, 0, bb(0.0, 0.0, 10.0, 10.0), vec![1.0, 0.0])] },
            KeyFrame { frame: 1, detections: vec![det(1, 1, bb(0.0, 0.0, 10.0, 10.0), vec![0.0, 1.0])] },
        ];
        let out = associate(&frames, &AssociationConfig::default(), 10.0).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn interpolate_identity_and_midpoint() {
        let t = traj(&[(0, bb(0.0, 0.0, 10.0, 10.0)), (1, bb(1.0, 1.0, 11.0, 11.0))], 10.0);
        assert_eq!(interpolate(&t, 1).unwrap(), t);

        let t = traj(&[(0, bb(0.0, 0.0, 10.0, 10.0)), (2, bb(10.0, 10.0, 20.0, 20.0))], 10.0);
        let d = interpolate(&t, 2).unwrap();
        assert_eq!(d.boxes[&1], bb(5.0, 5.0, 15.0, 15.0));
        assert!(d.is_dense());
    }

    #[test]
    fn interpolate_rejects_gaps_and_misalignment() {
        let t = traj(&[(0, bb(0.0, 0.0, 1.0, 1.0)), (4, bb(0.0, 0.0, 1.0, 1.0))], 10.0);
        assert!(matches!(interpolate(&t, 2), Err(TrackError::Gap { frame: 0, .. })));
        let t = traj(&[(3, bb(0.0, 0.0, 1.0, 1.0))], 10.0);
        assert!(matches!(interpolate(&t, 2), Err(TrackError::Misaligned { .. })));
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate_feature(&[vec![0.25f32, -1.0]]).unwrap(), vec![0.25, -1.0]);
        assert_eq!(
            aggregate_feature(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(aggregate_feature::<Vec<f32>>(&[]), Err(TrackError::EmptyFeatures));
        assert!(matches!(
            aggregate_feature(&[vec![1.0f32], vec![1.0, 2.0]]),
            Err(TrackError::Dimension { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn normalized_aggregation() {
        let f = trajectory_feature(&[vec![3.0, 4.0], vec![0.0, 2.0]], true).unwrap();
        assert!((f[0] - 0.3).abs() < 1e-6 && (f[1] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn filter_duration_and_static() {
        let cfg = AssociationConfig::default();
        // 0.5 s at 10 fps, moving far
        let short = traj(&[(0, bb(0.0, 0.0, 10.0, 10.0)), (5, bb(100.0, 0.0, 110.0, 10.0))], 10.0);
        // identical first and last boxes over 2 s
        let parked = traj(&[(0, bb(0.0, 0.0, 10.0, 10.0)), (20, bb(0.0, 0.0, 10.0, 10.0))], 10.0);
        // disjoint first and last boxes over 2 s
        let moving = traj(&[(0, bb(0.0, 0.0, 10.0, 10.0)), (20, bb(50.0, 0.0, 60.0, 10.0))], 10.0);
        let kept = filter_trajectories(&[short, parked, moving.clone()], &cfg);
        assert_eq!(kept, vec![moving]);
    }

    #[test]
    fn orientation_cases() {
        let t = traj(&[(0, bb(0.0, 0.0, 2.0, 2.0)), (1, bb(5.0, 0.0, 7.0, 2.0))], 10.0);
        assert_eq!(compute_orientation(&t), [1.0, 0.0]);
        let t = traj(&[(0, bb(0.0, 0.0, 2.0, 2.0)), (1, bb(0.0, 0.0, 2.0, 2.0))], 10.0);
        assert_eq!(compute_orientation(&t), [0.0, 0.0]);
        let t = traj(&[(0, bb(0.0, 0.0, 2.0, 2.0)), (1, bb(3.0, 4.0, 5.0, 6.0))], 10.0);
        let o = compute_orientation(&t);
        assert!((o[0] - 0.6).abs() < 1e-12 && (o[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn json_lines_round_trip() {
        let mut t = traj(&[(3, bb(0.5, 0.0, 2.0, 2.0)), (4, bb(1.0, 0.25, 3.0, 2.0))], 10.0);
        t.frame_features.clear();
        let text = write_trajectories(std::slice::from_ref(&t));
        assert!(text.starts_with("{\"trajectory_id\":1,\"camera_id\":\"c1\",\"st\":0.3,"));
        assert_eq!(read_trajectories(&text).unwrap(), vec![t]);
    }
}
