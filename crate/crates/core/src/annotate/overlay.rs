use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnnotateError, AnnotationStore, Result, TrajectoryRecord};
use crate::geometry::BoundingBox;
use crate::ids::{CameraId, GlobalId, TrajRef};

/// What to draw: a single trajectory or every member of an identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayTarget {
    Trajectory(TrajRef),
    Global(GlobalId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayBox {
    pub trajectory_id: u64,
    pub global_id: Option<GlobalId>,
    /// `#rrggbb`.
    pub color: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayFrame {
    pub frame: u32,
    pub boxes: Vec<OverlayBox>,
}

/// Boxes to draw over one camera clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayPayload {
    pub camera_id: CameraId,
    pub clip_uri: String,
    pub fps: f64,
    pub frames: Vec<OverlayFrame>,
}

fn fnv1a(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0x811c_9dc5u32, |h, &b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

fn hsv_hex(hue: f64, s: f64, v: f64) -> String {
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let byte = |u: f64| ((u + m) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

/// Display color of a global id; stable across runs and platforms.
pub fn color_for(id: GlobalId) -> String {
    hsv_hex((fnv1a(&id.0.to_le_bytes()) % 360) as f64, 0.65, 0.95)
}

/// Color for a trajectory with no identity yet.
fn color_for_unassigned(r: &TrajRef) -> String {
    hsv_hex((fnv1a(r.to_string().as_bytes()) % 360) as f64, 0.25, 0.85)
}

/// Overlay payloads for the target within `[from, to]` seconds, one per
/// camera involved. Open ends default to the whole clip.
pub fn build_overlay(
    store: &AnnotationStore,
    target: &OverlayTarget,
    from: Option<f64>,
    to: Option<f64>,
) -> Result<Vec<OverlayPayload>> {
    let members: Vec<&TrajectoryRecord> = match target {
        OverlayTarget::Trajectory(r) => {
            vec![store.trajectory(r).ok_or_else(|| AnnotateError::TrajectoryNotFound(r.clone()))?]
        }
        OverlayTarget::Global(g) => {
            let rec = store.record(*g).ok_or(AnnotateError::IdentityNotFound(*g))?;
            rec.members
                .iter()
                .map(|m| store.trajectory(m).ok_or_else(|| AnnotateError::TrajectoryNotFound(m.clone())))
                .collect::<Result<_>>()?
        }
    };
    if let (Some(a), Some(b)) = (from, to) {
        if a > b {
            return Err(AnnotateError::Input(format!("empty time range [{a}, {b}]")));
        }
    }

    let mut per_cam: BTreeMap<&CameraId, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for t in members {
        per_cam.entry(&t.camera_id).or_default().push(t);
    }
    let mut out = Vec::with_capacity(per_cam.len());
    for (cam, trajs) in per_cam {
        let meta = store
            .camera(cam)
            .ok_or_else(|| AnnotateError::CameraNotFound(cam.to_string()))?;
        let lo = from.map_or(0.0, |t| (t * meta.fps).ceil().max(0.0));
        let hi = to.map_or(f64::INFINITY, |t| (t * meta.fps).floor());
        let mut frames: BTreeMap<u32, Vec<OverlayBox>> = BTreeMap::new();
        for t in &trajs {
            let r = t.traj_ref();
            let gid = store.global_id_of(&r);
            let color = gid.map_or_else(|| color_for_unassigned(&r), color_for);
            for (&f, b) in &t.boxes {
                let ff = f as f64;
                if ff < lo || ff > hi || f >= meta.frame_count {
                    continue;
                }
                frames.entry(f).or_default().push(OverlayBox {
                    trajectory_id: t.trajectory_id,
                    global_id: gid,
                    color: color.clone(),
                    bbox: *b,
                });
            }
        }
        out.push(OverlayPayload {
            camera_id: cam.clone(),
            clip_uri: trajs.first().map_or_else(|| meta.clip_uri.clone(), |t| t.clip_uri.clone()),
            fps: meta.fps,
            frames: frames
                .into_iter()
                .map(|(frame, boxes)| OverlayFrame { frame, boxes })
                .collect(),
        });
    }
    Ok(out)
}
