//! Identity-level evaluation of single-camera trajectories.
//!
//! A predicted trajectory is a true positive when it covers more than
//! `high` of a ground-truth trajectory's frames; everything else is a
//! false positive, and every ground truth without a true positive is a
//! miss.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ids::CameraId;
use crate::tracker::Trajectory;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction {pred} is on camera {pred_camera}, ground truth {gt} on {gt_camera}")]
    CameraMismatch {
        pred: u64,
        pred_camera: CameraId,
        gt: u64,
        gt_camera: CameraId,
    },
    #[error("invalid thresholds: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Degree above which a prediction counts as a true positive.
    pub high: f64,
    /// Degree at or below which a prediction is a plain failure.
    pub low: f64,
    /// Per-frame IoU needed for a frame to count as matched.
    pub iou_min: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            high: 0.8,
            low: 0.2,
            iou_min: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.high) && unit(self.low) && unit(self.iou_min)) || self.low > self.high {
            return Err(EvalError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDegree {
    pub predicted_id: u64,
    pub gt_id: u64,
    pub degree: f64,
}

/// Fraction of the ground-truth frames where the prediction has a box with
/// IoU at least `iou_min`.
pub fn matching_degree(pred: &Trajectory, gt: &Trajectory, iou_min: f64) -> Result<f64> {
    if pred.camera_id != gt.camera_id {
        return Err(EvalError::CameraMismatch {
            pred: pred.trajectory_id,
            pred_camera: pred.camera_id.clone(),
            gt: gt.trajectory_id,
            gt_camera: gt.camera_id.clone(),
        });
    }
    if gt.boxes.is_empty() {
        return Ok(0.0);
    }
    let matched = gt
        .boxes
        .iter()
        .filter(|(f, g)| pred.boxes.get(f).is_some_and(|p| p.iou(g) >= iou_min))
        .count();
    Ok(matched as f64 / gt.boxes.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
    /// False positives whose degree was in `(low, high]`.
    pub partial: u64,
}

impl Counts {
    pub fn precision_recall(&self) -> (f64, f64) {
        precision_recall(self)
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
        self.partial += o.partial;
    }
}

/// `IDTP / (IDTP + IDFP)` and `IDTP / (IDTP + IDFN)`, zero on an empty
/// denominator.
pub fn precision_recall(c: &Counts) -> (f64, f64) {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (ratio(c.idtp, c.idtp + c.idfp), ratio(c.idtp, c.idtp + c.idfn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub counts: Counts,
    /// Greedy one-to-one assignment, in the order it was made.
    pub assignment: Vec<MatchDegree>,
}

/// Greedy assignment of predictions to ground truths by descending degree,
/// ties by smaller prediction id then smaller ground-truth id.
pub fn classify(preds: &[Trajectory], gts: &[Trajectory], cfg: &EvalConfig) -> Result<Classification> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    for p in preds {
        for g in gts {
            let degree = matching_degree(p, g, cfg.iou_min)?;
            if degree > 0.0 {
                pairs.push(MatchDegree {
                    predicted_id: p.trajectory_id,
                    gt_id: g.trajectory_id,
                    degree,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.degree
            .total_cmp(&a.degree)
            .then(a.predicted_id.cmp(&b.predicted_id))
            .then(a.gt_id.cmp(&b.gt_id))
    });
    let mut pred_done = BTreeMap::new();
    let mut gt_done = BTreeMap::new();
    let mut assignment = Vec::new();
    for m in pairs {
        if pred_done.contains_key(&m.predicted_id) || gt_done.contains_key(&m.gt_id) {
            continue;
        }
        pred_done.insert(m.predicted_id, m.degree);
        gt_done.insert(m.gt_id, ());
        assignment.push(m);
    }

    let mut counts = Counts::default();
    for p in preds {
        match pred_done.get(&p.trajectory_id) {
            Some(&d) if d > cfg.high => counts.idtp += 1,
            Some(&d) => {
                counts.idfp += 1;
                if d > cfg.low {
                    counts.partial += 1;
                }
            }
            None => counts.idfp += 1,
        }
    }
    counts.idfn = gts.len() as u64 - counts.idtp;
    Ok(Classification { counts, assignment })
}

/// One row of the report: counts and scores for one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEval {
    pub scene: String,
    pub camera_id: CameraId,
    pub algorithm_count: usize,
    pub gt_count: usize,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cameras: Vec<CameraEval>,
    pub total: Counts,
    pub precision: f64,
    pub recall: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,camera,algorithm_count,gt_count,precision_pct,recall_pct\n");
        for c in &self.cameras {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.2},{:.2}",
                c.scene,
                c.camera_id,
                c.algorithm_count,
                c.gt_count,
                c.precision * 100.0,
                c.recall * 100.0
            );
        }
        out
    }

    pub fn camera(&self, id: &CameraId) -> Option<&CameraEval> {
        self.cameras.iter().find(|c| &c.camera_id == id)
    }
}

/// Evaluates every camera present in either map.
pub fn evaluate(
    scene: &str,
    preds: &BTreeMap<CameraId, Vec<Trajectory>>,
    gts: &BTreeMap<CameraId, Vec<Trajectory>>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let empty = Vec::new();
    let mut cams: Vec<&CameraId> = preds.keys().chain(gts.keys()).collect();
    cams.sort();
    cams.dedup();
    let mut cameras = Vec::with_capacity(cams.len());
    let mut total = Counts::default();
    for cam in cams {
        let p = preds.get(cam).unwrap_or(&empty);
        let g = gts.get(cam).unwrap_or(&empty);
        let counts = classify(p, g, cfg)?.counts;
        let (precision, recall) = precision_recall(&counts);
        total += counts;
        cameras.push(CameraEval {
            scene: scene.to_owned(),
            camera_id: cam.clone(),
            algorithm_count: p.len(),
            gt_count: g.len(),
            counts,
            precision,
            recall,
        });
    }
    let (precision, recall) = precision_recall(&total);
    Ok(EvalReport {
        cameras,
        total,
        precision,
        recall,
    })
}
