use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AnnotateError, AnnotationStore, Result};
use crate::ids::CameraId;

/// Bitrate of the compressed-video comparison baseline, bits per second.
pub const SYNTHETIC_BITRATE_BPS: f64 = 2_000_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    /// Serialized size of all trajectory and identity records.
    pub annotation_bytes: u64,
    /// Raw RGB frames for every annotated frame.
    pub naive_render_bytes: u64,
    pub ratio: f64,
    /// The same frames encoded at [`SYNTHETIC_BITRATE_BPS`].
    pub bitrate_baseline_bytes: u64,
    pub bitrate_ratio: f64,
    pub annotated_frames: u64,
}

/// Compares the compact annotation store against storing rendered video.
///
/// A frame counts as annotated when at least one trajectory record of its
/// camera has a box there. Cameras without annotated frames contribute
/// nothing to either baseline.
pub fn measure_storage(store: &AnnotationStore) -> Result<StorageReport> {
    if store.is_empty() {
        return Err(AnnotateError::Input("store is empty".into()));
    }
    let mut annotation_bytes = 0u64;
    let mut frames: BTreeMap<&CameraId, BTreeSet<u32>> = BTreeMap::new();
    for t in store.trajectories() {
        annotation_bytes += serialized_len(t)?;
        frames.entry(&t.camera_id).or_default().extend(t.boxes.keys());
    }
    for r in store.records() {
        annotation_bytes += serialized_len(r)?;
    }

    let mut naive = 0u64;
    let mut bitrate = 0.0f64;
    let mut annotated_frames = 0u64;
    for (cam, set) in frames {
        let meta = store
            .camera(cam)
            .ok_or_else(|| AnnotateError::CameraNotFound(cam.to_string()))?;
        let n = set.len() as u64;
        annotated_frames += n;
        naive += n * meta.width as u64 * meta.height as u64 * 3;
        bitrate += n as f64 / meta.fps * SYNTHETIC_BITRATE_BPS / 8.0;
    }
    let bitrate_baseline_bytes = bitrate.round() as u64;
    let ratio_of = |den: u64| if den > 0 { annotation_bytes as f64 / den as f64 } else { 0.0 };
    Ok(StorageReport {
        annotation_bytes,
        naive_render_bytes: naive,
        ratio: ratio_of(naive),
        bitrate_baseline_bytes,
        bitrate_ratio: ratio_of(bitrate_baseline_bytes),
        annotated_frames,
    })
}

fn serialized_len(v: &impl Serialize) -> Result<u64> {
    serde_json::to_vec(v)
        .map(|b| b.len() as u64)
        .map_err(|e| AnnotateError::Format(e.to_string()))
}
