use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    Action, AnnotateError, AnnotationRecord, AnnotationStore, HistoryEntry, Result, Snapshot, TrajectoryRecord,
};
use crate::ids::{CameraId, GlobalId, TrajRef};
use crate::ingest::CameraVideoMeta;

pub const GT_HEADER: &str = "frame,global_id,x,y,w,h,conf,cls,vis,z";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    /// Per-camera ground-truth CSV plus a JSON identity index.
    #[default]
    Mtmc,
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("mtmc")
    }
}

impl FromStr for ExportFormat {
    type Err = AnnotateError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtmc" => Ok(ExportFormat::Mtmc),
            _ => Err(AnnotateError::Input(format!("unknown export format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    global_id: GlobalId,
    members: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Index {
    format: ExportFormat,
    cameras: Vec<CameraVideoMeta>,
    identities: Vec<IndexEntry>,
}

/// Exported files by relative name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportBundle {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl ExportBundle {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| AnnotateError::Io {
            path: dir.to_owned(),
            source,
        })?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|source| AnnotateError::Io { path, source })?;
        }
        Ok(())
    }
}

/// Reads every `.csv` file and the index from an export directory.
pub fn read_export_dir(dir: &Path) -> Result<ExportBundle> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| AnnotateError::Io { path, source }
    };
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name == INDEX_FILE || name.ends_with(".csv") {
            let bytes = std::fs::read(&path).map_err(io(&path))?;
            files.insert(name.to_owned(), bytes);
        }
    }
    Ok(ExportBundle { files })
}

fn fmt_row(frame: u32, gid: GlobalId, b: &crate::geometry::BoundingBox) -> String {
    format!("{frame},{},{},{},{},{},1,-1,-1,-1\n", gid.0, b.x1, b.y1, b.width(), b.height())
}

/// Writes the identities of `store` as a dataset.
///
/// Every registered camera gets a CSV, possibly header-only. Trajectories
/// without an identity are left out.
pub fn export_dataset(store: &AnnotationStore, format: ExportFormat) -> Result<ExportBundle> {
    let ExportFormat::Mtmc = format;
    let mut rows: BTreeMap<CameraId, Vec<(u32, GlobalId, String)>> = store
        .cameras()
        .map(|c| (c.camera_id.clone(), Vec::new()))
        .collect();
    let mut identities = Vec::new();
    for rec in store.records() {
        let mut members = Vec::with_capacity(rec.members.len());
        for m in &rec.members {
            let t = store
                .trajectory(m)
                .ok_or_else(|| AnnotateError::TrajectoryNotFound(m.clone()))?;
            let cam_rows = rows.entry(t.camera_id.clone()).or_default();
            for (&f, b) in &t.boxes {
                cam_rows.push((f, rec.global_id, fmt_row(f, rec.global_id, b)));
            }
            members.push(t.clone());
        }
        identities.push(IndexEntry {
            global_id: rec.global_id,
            members,
        });
    }

    let mut files = BTreeMap::new();
    for (cam, mut cam_rows) in rows {
        cam_rows.sort_by_key(|a| (a.0, a.1));
        let mut text = String::from(GT_HEADER);
        text.push('\n');
        for (_, _, line) in cam_rows {
            text.push_str(&line);
        }
        files.insert(format!("{cam}.csv"), text.into_bytes());
    }
    let index = Index {
        format,
        cameras: store.cameras().cloned().collect(),
        identities,
    };
    let json = serde_json::to_vec_pretty(&index).map_err(|e| AnnotateError::Format(e.to_string()))?;
    files.insert(INDEX_FILE.to_owned(), json);
    Ok(ExportBundle { files })
}

/// Contents of an export, checked for consistency between the CSV rows
/// and the index.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedDataset {
    pub cameras: Vec<CameraVideoMeta>,
    pub identities: BTreeMap<GlobalId, Vec<TrajectoryRecord>>,
}

impl ImportedDataset {
    pub fn partition(&self) -> BTreeSet<BTreeSet<TrajRef>> {
        self.identities
            .values()
            .map(|ms| ms.iter().map(TrajectoryRecord::traj_ref).collect())
            .collect()
    }

    /// Builds a store holding the imported identities, each at version 1.
    pub fn into_store(self, user: &str, ts: i64, allow_revisits: bool) -> AnnotationStore {
        let next_global = self.identities.keys().next_back().map_or(1, |g| g.0 + 1);
        let mut trajectories = Vec::new();
        let mut records = Vec::new();
        for (gid, members) in self.identities {
            records.push(AnnotationRecord {
                global_id: gid,
                members: members.iter().map(TrajectoryRecord::traj_ref).collect(),
                version: 1,
                history: vec![HistoryEntry {
                    user: user.to_owned(),
                    action: Action::Import,
                    ts,
                }],
            });
            trajectories.extend(members);
        }
        AnnotationStore::from_snapshot(Snapshot {
            seq: 0,
            next_global,
            allow_revisits,
            cameras: self.cameras,
            trajectories,
            records,
        })
    }
}

pub fn import_dataset(bundle: &ExportBundle) -> Result<ImportedDataset> {
    let index_bytes = bundle
        .files
        .get(INDEX_FILE)
        .ok_or_else(|| AnnotateError::Format(format!("missing {INDEX_FILE}")))?;
    let index: Index =
        serde_json::from_slice(index_bytes).map_err(|e| AnnotateError::Format(format!("{INDEX_FILE}: {e}")))?;

    let mut expected: BTreeMap<String, BTreeSet<(u32, u64)>> = BTreeMap::new();
    let mut identities = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for entry in index.identities {
        if entry.members.is_empty() {
            return Err(AnnotateError::Format(format!("identity {} has no members", entry.global_id)));
        }
        for m in &entry.members {
            if !seen.insert(m.traj_ref()) {
                return Err(AnnotateError::Format(format!("{} appears in two identities", m.traj_ref())));
            }
            let rows = expected.entry(format!("{}.csv", m.camera_id)).or_default();
            rows.extend(m.boxes.keys().map(|&f| (f, entry.global_id.0)));
        }
        if identities.insert(entry.global_id, entry.members).is_some() {
            return Err(AnnotateError::Format(format!("duplicate identity {}", entry.global_id)));
        }
    }

    for (name, bytes) in &bundle.files {
        if name == INDEX_FILE {
            continue;
        }
        let text = std::str::from_utf8(bytes).map_err(|e| AnnotateError::Format(format!("{name}: {e}")))?;
        let found = parse_gt_keys(name, text)?;
        let want = expected.remove(name).unwrap_or_default();
        if found != want {
            return Err(AnnotateError::Format(format!(
                "{name}: {} rows do not match the index ({} expected)",
                found.len(),
                want.len()
            )));
        }
    }
    if let Some(name) = expected.keys().next() {
        return Err(AnnotateError::Format(format!("{name} missing from export")));
    }
    Ok(ImportedDataset {
        cameras: index.cameras,
        identities,
    })
}

fn parse_gt_keys(name: &str, text: &str) -> Result<BTreeSet<(u32, u64)>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(GT_HEADER) {
        return Err(AnnotateError::Format(format!("{name}: bad header")));
    }
    let mut keys = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || AnnotateError::Format(format!("{name} line {}: {line:?}", i + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(bad());
        }
        let frame = cols[0].parse().map_err(|_| bad())?;
        let gid = cols[1].parse().map_err(|_| bad())?;
        for c in &cols[2..6] {
            c.parse::<f64>().map_err(|_| bad())?;
        }
        if !keys.insert((frame, gid)) {
            return Err(bad());
        }
    }
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn meta(cam: &str) -> CameraVideoMeta {
        CameraVideoMeta {
            camera_id: CameraId::new(cam),
            clip_uri: format!("file:///{cam}.mp4"),
            frame_count: 100,
            width: 640,
            height: 480,
            fps: 10.0,
        }
    }

    fn traj(cam: &str, id: u64) -> TrajectoryRecord {
        TrajectoryRecord {
            trajectory_id: id,
            camera_id: CameraId::new(cam),
            clip_uri: format!("file:///{cam}.mp4"),
            t_s: 0.0,
            t_e: 0.2,
            boxes: (0..3)
                .map(|f| (f, BoundingBox::new(f as f64 + 0.25, 1.0, f as f64 + 10.5, 9.0).unwrap()))
                .collect(),
            orientation: [1.0, 0.0],
            feature: vec![0.0, 1.0],
        }
    }

    fn store() -> AnnotationStore {
        let mut s = AnnotationStore::new().with_clock(|| 5);
        for cam in ["a", "b"] {
            s.register_camera(meta(cam), "u").unwrap();
            s.register_trajectory(traj(cam, 1), "u").unwrap();
            s.register_trajectory(traj(cam, 2), "u").unwrap();
        }
        s
    }

    #[test]
    fn empty_store_gives_header_only_files() {
        let b = export_dataset(&store(), ExportFormat::Mtmc).unwrap();
        assert_eq!(b.files["a.csv"], format!("{GT_HEADER}\n").into_bytes());
        assert_eq!(b.files["b.csv"], format!("{GT_HEADER}\n").into_bytes());
        assert!(import_dataset(&b).unwrap().partition().is_empty());
    }

    #[test]
    fn identity_across_cameras_in_both_csvs() {
        let mut s = store();
        s.submit_match(&TrajRef::new("a", 2), &TrajRef::new("b", 1), "u", None).unwrap();
        let b = export_dataset(&s, ExportFormat::Mtmc).unwrap();
        let a = String::from_utf8(b.files["a.csv"].clone()).unwrap();
        assert_eq!(a.lines().nth(1), Some("0,1,0.25,1,10.25,8,1,-1,-1,-1"));
        assert_eq!(a.lines().count(), 4);
        assert!(String::from_utf8(b.files["b.csv"].clone()).unwrap().contains("\n2,1,"));
    }

    #[test]
    fn round_trip_through_directory() {
        let mut s = store();
        s.submit_match(&TrajRef::new("a", 1), &TrajRef::new("b", 2), "u", None).unwrap();
        s.submit_match(&TrajRef::new("a", 2), &TrajRef::new("b", 1), "u", None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&s, ExportFormat::Mtmc).unwrap().write_to(dir.path()).unwrap();
        let imported = import_dataset(&read_export_dir(dir.path()).unwrap()).unwrap();
        assert_eq!(imported.partition(), s.partition());
        let restored = imported.into_store("import", 0, false);
        assert_eq!(restored.partition(), s.partition());
        assert_eq!(restored.global_id_of(&TrajRef::new("a", 2)), s.global_id_of(&TrajRef::new("a", 2)));
    }

    #[test]
    fn tampered_csv_rejected() {
        let mut s = store();
        s.submit_match(&TrajRef::new("a", 1), &TrajRef::new("b", 2), "u", None).unwrap();
        let mut b = export_dataset(&s, ExportFormat::Mtmc).unwrap();
        b.files.get_mut("a.csv").unwrap().extend_from_slice(b"50,1,0,0,1,1,1,-1,-1,-1\n");
        assert!(matches!(import_dataset(&b), Err(AnnotateError::Format(_))));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("mtmc".parse::<ExportFormat>().unwrap(), ExportFormat::Mtmc);
        assert!("coco".parse::<ExportFormat>().is_err());
    }
}
