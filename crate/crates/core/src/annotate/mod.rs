//! Identity annotations over single-camera trajectories.
//!
//! [`AnnotationStore`] keeps the compact per-trajectory records and the
//! assignment of trajectories to global vehicle identities. Every mutation
//! is appended to an event log so the store can be rebuilt by replay, and
//! every identity record carries a version used for optimistic concurrency.

mod export;
mod overlay;
mod record;
mod storage;
mod store;

pub use export::{export_dataset, import_dataset, read_export_dir, ExportBundle, ExportFormat, ImportedDataset};
pub use overlay::{build_overlay, color_for, OverlayBox, OverlayFrame, OverlayPayload, OverlayTarget};
pub use record::{quantize, TrajectoryRecord};
pub use storage::{measure_storage, StorageReport, SYNTHETIC_BITRATE_BPS};
pub use store::{
    Action, AnnotationRecord, AnnotationStore, Event, HistoryEntry, Snapshot, UnmatchOutcome,
};

use std::path::PathBuf;

use crate::ids::{GlobalId, TrajRef};

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("trajectory {0} not found")]
    TrajectoryNotFound(TrajRef),
    #[error("trajectory {0} is not assigned to any identity")]
    NotAssigned(TrajRef),
    #[error("identity {0} not found")]
    IdentityNotFound(GlobalId),
    #[error("camera {0} not registered")]
    CameraNotFound(String),
    #[error("version conflict: expected {expected}, current {current}")]
    VersionConflict { expected: u64, current: u64 },
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data: {0}")]
    Format(String),
}

impl AnnotateError {
    /// True for the not-found family of errors.
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            AnnotateError::TrajectoryNotFound(_)
                | AnnotateError::NotAssigned(_)
                | AnnotateError::IdentityNotFound(_)
                | AnnotateError::CameraNotFound(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, AnnotateError>;
