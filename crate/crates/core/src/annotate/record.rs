use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::ids::{CameraId, TrajRef};
use crate::tracker::Trajectory;

/// Stored form of one single-camera trajectory: clip reference, time span,
/// per-frame boxes, orientation and appearance feature.
///
/// Boxes are kept at 0.01 px resolution, which bounds the serialized size
/// per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trajectory_id: u64,
    pub camera_id: CameraId,
    /// Source clip.
    pub clip_uri: String,
    pub t_s: f64,
    pub t_e: f64,
    #[serde(with = "compact_boxes")]
    pub boxes: BTreeMap<u32, BoundingBox>,
    pub orientation: [f64; 2],
    pub feature: Vec<f64>,
}

/// Rounds to 0.01 px.
pub fn quantize(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory, clip_uri: impl Into<String>) -> Self {
        let boxes = t
            .boxes
            .iter()
            .map(|(&f, b)| (f, BoundingBox::from_array(b.as_array().map(quantize))))
            .collect();
        Self {
            trajectory_id: t.trajectory_id,
            camera_id: t.camera_id.clone(),
            clip_uri: clip_uri.into(),
            t_s: t.start_time,
            t_e: t.end_time,
            boxes,
            orientation: t.orientation,
            feature: t.feature.clone(),
        }
    }

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

    /// Checks `t_s <= t_e` and that the box frames match the time span at
    /// the given frame rate.
    pub fn check(&self, fps: f64) -> Result<(), String> {
        if !(self.t_s <= self.t_e) {
            return Err(format!("{}: t_s {} > t_e {}", self.traj_ref(), self.t_s, self.t_e));
        }
        let (Some(a), Some(b)) = (self.first_frame(), self.last_frame()) else {
            return Err(format!("{}: no boxes", self.traj_ref()));
        };
        let close = |frame: u32, t: f64| (frame as f64 / fps - t).abs() <= 0.5 / fps;
        if !close(a, self.t_s) || !close(b, self.t_e) {
            return Err(format!(
                "{}: frames {a}..={b} do not match span [{}, {}] at {fps} fps",
                self.traj_ref(),
                self.t_s,
                self.t_e
            ));
        }
        Ok(())
    }
}

mod compact_boxes {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::BoundingBox;

    pub fn serialize<S: Serializer>(boxes: &BTreeMap<u32, BoundingBox>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<(u32, f64, f64, f64, f64)> = boxes
            .iter()
            .map(|(&f, b)| (f, b.x1, b.y1, b.x2, b.y2))
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, BoundingBox>, D::Error> {
        let rows: Vec<(u32, f64, f64, f64, f64)> = Vec::deserialize(d)?;
        rows.into_iter()
            .map(|(f, x1, y1, x2, y2)| {
                BoundingBox::new(x1, y1, x2, y2)
                    .map(|b| (f, b))
                    .ok_or_else(|| serde::de::Error::custom(format!("invalid box at frame {f}")))
            })
            .collect()
    }
}
