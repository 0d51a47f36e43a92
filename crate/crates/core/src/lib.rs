//! Core of the multi-camera vehicle annotation toolkit.
//!
//! The pipeline runs in this order:
//!
//! 1. [`ingest`] reads per-camera detection files and samples key frames.
//! 2. [`tracker`] associates key-frame detections into single-camera
//!    trajectories, fills intermediate frames by linear interpolation and
//!    drops static or short-lived tracks.
//! 3. [`recommend`] builds time-constrained, topology-pruned candidate lists
//!    for cross-camera matching.
//! 4. [`annotate`] holds the versioned identity assignments, the compact
//!    trajectory records and the overlay payloads used for playback.
//! 5. [`evaluate`] scores generated trajectories against ground truth.
//!
//! [`scenario`] generates synthetic camera networks with exact ground truth
//! for testing all of the above.

// Negated float comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotate;
pub mod assignment;
pub mod evaluate;
pub mod geometry;
pub mod ids;
pub mod ingest;
pub mod recommend;
pub mod scenario;
pub mod tracker;

pub use geometry::BoundingBox;
pub use ids::{CameraId, GlobalId, TrajRef};
pub use tracker::Trajectory;
