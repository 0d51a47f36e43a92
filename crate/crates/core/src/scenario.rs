//! Synthetic multi-camera traffic with exact ground truth.
//!
//! Vehicles follow routes through a camera graph. Inside each camera a
//! vehicle's box sweeps across the image at constant velocity in its own
//! lane. Detections are the true boxes plus optional jitter, dropout and
//! false positives; features are noisy copies of a per-vehicle unit vector.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotateError, AnnotationStore, TrajectoryRecord};
use crate::evaluate::{self, EvalConfig, EvalReport};
use crate::geometry::{l2_normalize, BoundingBox};
use crate::ids::{CameraId, TrajRef};
use crate::ingest::{self, CameraVideoMeta, Detection, SamplingConfig};
use crate::recommend::{Camera, CameraGraph, Edge, Overlap};
use crate::tracker::{self, compute_orientation, AssociationConfig, Trajectory};

/// Vertical spacing of lanes, pixels.
const LANE_PITCH: u32 = 90;
const MIN_FEATURE_ANGLE_DEG: f64 = 15.0;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Track(#[from] tracker::TrackError),
    #[error(transparent)]
    Eval(#[from] evaluate::EvalError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    /// Cameras in a chain with edges both ways; every vehicle drives the
    /// whole chain in one direction.
    Line,
    /// Row-major grid with edges to the right and downward neighbours;
    /// vehicles random-walk from a random cell until they leave the grid.
    Grid { cols: usize },
    /// Caller-supplied graph; vehicles random-walk along out-edges without
    /// revisiting a camera.
    Custom { graph: CameraGraph },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of each box coordinate, pixels.
    pub box_jitter: f64,
    /// Standard deviation per feature coordinate before normalization.
    pub feature_noise: f64,
    /// Probability that a true box is not detected.
    pub dropout: f64,
    /// Mean number of false positives per frame.
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_vehicles: usize,
    pub n_cameras: usize,
    pub frames_per_camera: u32,
    pub topology: Topology,
    /// Field-of-view overlap of every adjacent camera pair, seconds.
    pub overlap_seconds: f64,
    /// Share of traversals over an overlapping edge that enter the next
    /// camera before leaving the current one.
    pub overlap_fraction: f64,
    /// Entry-to-entry travel time bounds of every generated edge, seconds.
    pub travel_time_s: [f64; 2],
    /// Time a vehicle stays visible in a camera, seconds.
    pub dwell_s: [f64; 2],
    pub noise: NoiseConfig,
    pub fps: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub feature_dim: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_vehicles: 10,
            n_cameras: 3,
            frames_per_camera: 300,
            topology: Topology::Line,
            overlap_seconds: 0.0,
            overlap_fraction: 1.0,
            travel_time_s: [4.0, 8.0],
            dwell_s: [3.0, 6.0],
            noise: NoiseConfig::default(),
            fps: 10.0,
            image_width: 1280,
            image_height: 960,
            feature_dim: 32,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        let n = &self.noise;
        if self.n_vehicles == 0 || self.n_cameras == 0 || self.frames_per_camera == 0 {
            return bad("vehicle, camera and frame counts must be positive".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        if !prob(n.dropout) || !prob(self.overlap_fraction) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(n.box_jitter >= 0.0 && n.feature_noise >= 0.0 && n.false_positive_rate >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.overlap_seconds >= 0.0) {
            return bad("overlap must be non-negative".into());
        }
        let [tt_lo, tt_hi] = self.travel_time_s;
        let [dw_lo, dw_hi] = self.dwell_s;
        if !(0.0 < tt_lo && tt_lo <= tt_hi && 0.0 < dw_lo && dw_lo <= dw_hi) {
            return bad(format!("bad bounds: travel {:?}, dwell {:?}", self.travel_time_s, self.dwell_s));
        }
        if self.frames(tt_lo).max(1) > self.frames_floor(tt_hi) {
            return bad("travel-time bounds contain no whole frame count".into());
        }
        if self.frames_floor(tt_hi) < self.frames(dw_lo) + 1 {
            return bad("travel time must exceed the minimum dwell".into());
        }
        if self.image_height < LANE_PITCH || self.image_width < 200 {
            return bad(format!("image {}x{} too small", self.image_width, self.image_height));
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2".into());
        }
        match &self.topology {
            Topology::Line => {}
            Topology::Grid { cols } => {
                if *cols == 0 || !self.n_cameras.is_multiple_of(*cols) {
                    return bad(format!("{} cameras do not fill a grid with {cols} columns", self.n_cameras));
                }
            }
            Topology::Custom { graph } => {
                graph.validate().map_err(|e| ScenarioError::Config(e.to_string()))?;
                if graph.cameras.len() != self.n_cameras {
                    return bad("custom graph camera count differs from n_cameras".into());
                }
            }
        }
        let longest = match &self.topology {
            Topology::Line => self.n_cameras,
            Topology::Grid { cols } => cols + self.n_cameras / cols - 1,
            Topology::Custom { .. } => self.n_cameras,
        };
        let worst = (longest - 1) as f64 * tt_hi + dw_hi.max(self.overlap_seconds) + 2.0 / self.fps;
        let recorded = (self.frames_per_camera - 1) as f64 / self.fps;
        if worst > recorded {
            return bad(format!(
                "a route may need {worst:.1} s but cameras record only {recorded:.1} s"
            ));
        }
        Ok(())
    }

    fn frames(&self, seconds: f64) -> u32 {
        (seconds * self.fps - 1e-9).ceil() as u32
    }

    fn frames_floor(&self, seconds: f64) -> u32 {
        (seconds * self.fps + 1e-9).floor() as u32
    }

    fn n_lanes(&self) -> u32 {
        self.image_height / LANE_PITCH
    }
}

/// One pass of a vehicle through one camera.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub camera_id: CameraId,
    pub trajectory_id: u64,
    pub entry_frame: u32,
    pub exit_frame: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTruth {
    pub vehicle_id: u64,
    pub base_feature: Vec<f64>,
    pub visits: Vec<Visit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub vehicles: Vec<VehicleTruth>,
    /// Dense true trajectories per camera, ids from 1 in entry order.
    pub trajectories: BTreeMap<CameraId, Vec<Trajectory>>,
}

impl GroundTruth {
    /// Cross-camera correspondence: one class per vehicle.
    pub fn partition(&self) -> BTreeSet<BTreeSet<TrajRef>> {
        self.vehicles
            .iter()
            .map(|v| {
                v.visits
                    .iter()
                    .map(|s| TrajRef {
                        camera_id: s.camera_id.clone(),
                        trajectory_id: s.trajectory_id,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn vehicle_of(&self, r: &TrajRef) -> Option<u64> {
        self.vehicles
            .iter()
            .find(|v| {
                v.visits
                    .iter()
                    .any(|s| s.camera_id == r.camera_id && s.trajectory_id == r.trajectory_id)
            })
            .map(|v| v.vehicle_id)
    }

    pub fn trajectory(&self, r: &TrajRef) -> Option<&Trajectory> {
        self.trajectories
            .get(&r.camera_id)?
            .iter()
            .find(|t| t.trajectory_id == r.trajectory_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub graph: CameraGraph,
    pub metas: BTreeMap<CameraId, CameraVideoMeta>,
    pub ground_truth: GroundTruth,
    pub detections: BTreeMap<CameraId, Vec<Detection>>,
}

fn camera_name(i: usize) -> CameraId {
    CameraId::new(format!("c{:03}", i + 1))
}

fn build_graph(cfg: &ScenarioConfig) -> CameraGraph {
    let [tt_min, tt_max] = cfg.travel_time_s;
    let edge = |a: usize, b: usize| Edge {
        from: camera_name(a),
        to: camera_name(b),
        tt_min,
        tt_max,
    };
    let (positions, edges): (Vec<[f64; 2]>, Vec<Edge>) = match &cfg.topology {
        Topology::Custom { graph } => return graph.clone(),
        Topology::Line => (
            (0..cfg.n_cameras).map(|i| [150.0 * i as f64, 0.0]).collect(),
            (1..cfg.n_cameras).flat_map(|i| [edge(i - 1, i), edge(i, i - 1)]).collect(),
        ),
        Topology::Grid { cols } => {
            let cols = *cols;
            let mut edges = Vec::new();
            for i in 0..cfg.n_cameras {
                if (i + 1) % cols != 0 {
                    edges.push(edge(i, i + 1));
                }
                if i + cols < cfg.n_cameras {
                    edges.push(edge(i, i + cols));
                }
            }
            (
                (0..cfg.n_cameras)
                    .map(|i| [150.0 * (i % cols) as f64, 150.0 * (i / cols) as f64])
                    .collect(),
                edges,
            )
        }
    };
    let mut overlaps = Vec::new();
    if cfg.overlap_seconds > 0.0 {
        let mut pairs = BTreeSet::new();
        for e in &edges {
            let pair = if e.from < e.to { (&e.from, &e.to) } else { (&e.to, &e.from) };
            if pairs.insert(pair) {
                overlaps.push(Overlap {
                    a: pair.0.clone(),
                    b: pair.1.clone(),
                    seconds: cfg.overlap_seconds,
                });
            }
        }
    }
    CameraGraph {
        cameras: positions
            .into_iter()
            .enumerate()
            .map(|(i, position)| Camera {
                camera_id: camera_name(i),
                position,
                zone_id: i as u32 + 1,
            })
            .collect(),
        edges,
        overlaps,
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            l2_normalize(&mut v);
            return v;
        }
    }
}

fn base_features(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let max_cos = MIN_FEATURE_ANGLE_DEG.to_radians().cos();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_vehicles);
    let mut attempts = 0usize;
    while out.len() < cfg.n_vehicles {
        attempts += 1;
        if attempts > 1000 * cfg.n_vehicles + 10_000 {
            return Err(ScenarioError::Config(format!(
                "cannot place {} features {MIN_FEATURE_ANGLE_DEG} degrees apart in {} dimensions",
                cfg.n_vehicles, cfg.feature_dim
            )));
        }
        let v = random_unit(rng, cfg.feature_dim);
        let dot = |u: &Vec<f64>| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        if out.iter().all(|u| dot(u) < max_cos) {
            out.push(v);
        }
    }
    Ok(out)
}

fn route(graph: &CameraGraph, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let index: BTreeMap<&CameraId, usize> = graph
        .cameras
        .iter()
        .enumerate()
        .map(|(i, c)| (&c.camera_id, i))
        .collect();
    match cfg.topology {
        Topology::Line => {
            let mut r: Vec<usize> = (0..cfg.n_cameras).collect();
            if rng.random_bool(0.5) {
                r.reverse();
            }
            r
        }
        _ => {
            let mut at = rng.random_range(0..graph.cameras.len());
            let mut r = vec![at];
            loop {
                let next: Vec<usize> = graph
                    .out_edges(&graph.cameras[at].camera_id)
                    .map(|e| index[&e.to])
                    .filter(|i| !r.contains(i))
                    .collect();
                if next.is_empty() {
                    return r;
                }
                at = next[rng.random_range(0..next.len())];
                r.push(at);
            }
        }
    }
}

struct Pass {
    vehicle: usize,
    camera: usize,
    entry: u32,
    exit: u32,
}

fn plan_vehicle(
    vehicle: usize,
    cams: &[usize],
    graph: &CameraGraph,
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Pass>> {
    let dwell_lo = cfg.frames(cfg.dwell_s[0]).max(2);
    let dwell_hi = cfg.frames_floor(cfg.dwell_s[1]).max(dwell_lo);
    let mut offsets = vec![0u32];
    let mut dwells = Vec::with_capacity(cams.len());
    for w in cams.windows(2) {
        let (a, b) = (&graph.cameras[w[0]].camera_id, &graph.cameras[w[1]].camera_id);
        let e = graph
            .edges
            .iter()
            .find(|e| &e.from == a && &e.to == b)
            .ok_or_else(|| ScenarioError::Config(format!("route uses missing edge {a} -> {b}")))?;
        let lo = cfg.frames(e.tt_min).max(1);
        let hi = cfg.frames_floor(e.tt_max);
        if lo > hi {
            return Err(ScenarioError::Config(format!("edge {a} -> {b} has no whole-frame travel time")));
        }
        let delta = rng.random_range(lo..=hi);
        let overlap = cfg.frames_floor(graph.overlap(a, b));
        let dwell = if overlap >= 1 && rng.random_bool(cfg.overlap_fraction) {
            delta + rng.random_range(1..=overlap)
        } else {
            let top = dwell_hi.min(delta - 1);
            if top < dwell_lo {
                return Err(ScenarioError::Config(format!(
                    "edge {a} -> {b}: travel time shorter than the minimum dwell"
                )));
            }
            rng.random_range(dwell_lo..=top)
        };
        dwells.push(dwell);
        offsets.push(offsets.last().unwrap() + delta);
    }
    dwells.push(rng.random_range(dwell_lo..=dwell_hi));
    let span = offsets
        .iter()
        .zip(&dwells)
        .map(|(o, d)| o + d)
        .max()
        .unwrap_or(0);
    let last = cfg.frames_per_camera - 1;
    if span > last {
        return Err(ScenarioError::Config(format!(
            "vehicle {vehicle} needs {span} frames but cameras record {}",
            cfg.frames_per_camera
        )));
    }
    let start = rng.random_range(0..=last - span);
    Ok(cams
        .iter()
        .zip(offsets.iter().zip(&dwells))
        .map(|(&camera, (&o, &d))| Pass {
            vehicle,
            camera,
            entry: start + o,
            exit: start + o + d,
        })
        .collect())
}

struct Lane {
    y: f64,
    width: f64,
    height: f64,
    rightward: bool,
}

impl Lane {
    fn box_at(&self, pass: &Pass, frame: u32, image_width: f64) -> BoundingBox {
        let span = image_width - self.width;
        let t = (frame - pass.entry) as f64 / (pass.exit - pass.entry) as f64;
        let x = if self.rightward { span * t } else { span * (1.0 - t) };
        BoundingBox {
            x1: x,
            y1: self.y,
            x2: x + self.width,
            y2: self.y + self.height,
        }
    }
}

/// Generates a scenario. Equal configs give identical scenarios.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let graph = build_graph(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let features = base_features(cfg, &mut rng)?;

    let mut passes: Vec<Pass> = Vec::new();
    let mut sizes = Vec::with_capacity(cfg.n_vehicles);
    for v in 0..cfg.n_vehicles {
        let cams = route(&graph, cfg, &mut rng);
        passes.extend(plan_vehicle(v, &cams, &graph, cfg, &mut rng)?);
        let w = rng.random_range(80.0..=160.0f64).round();
        let h = (w * rng.random_range(0.4..=0.6f64)).round().min(70.0);
        sizes.push((w, h));
    }
    let directions: Vec<bool> = (0..graph.cameras.len()).map(|_| rng.random_bool(0.5)).collect();

    // Per camera: entry order gives trajectory ids; lanes are taken
    // first-free so same-lane vehicles never overlap in time when avoidable.
    let n_lanes = cfg.n_lanes();
    let mut per_cam: BTreeMap<usize, Vec<&Pass>> = BTreeMap::new();
    for p in &passes {
        per_cam.entry(p.camera).or_default().push(p);
    }
    let mut visits: Vec<Vec<Visit>> = vec![Vec::new(); cfg.n_vehicles];
    let mut trajectories = BTreeMap::new();
    let mut cam_tracks: BTreeMap<usize, Vec<(&Pass, Lane)>> = BTreeMap::new();
    for (cam, mut ps) in per_cam {
        ps.sort_by_key(|p| (p.entry, p.vehicle));
        let camera_id = graph.cameras[cam].camera_id.clone();
        let mut lane_free = vec![0u32; n_lanes as usize];
        let mut trajs = Vec::with_capacity(ps.len());
        let mut tracks = Vec::with_capacity(ps.len());
        for (k, p) in ps.into_iter().enumerate() {
            let lane = lane_free
                .iter()
                .position(|&f| f < p.entry)
                .unwrap_or(p.vehicle % n_lanes as usize);
            lane_free[lane] = lane_free[lane].max(p.exit + 1);
            let (width, height) = sizes[p.vehicle];
            let lane = Lane {
                y: (lane as u32 * LANE_PITCH + 10) as f64,
                width,
                height,
                rightward: directions[cam],
            };
            let trajectory_id = k as u64 + 1;
            let boxes = (p.entry..=p.exit)
                .map(|f| (f, lane.box_at(p, f, cfg.image_width as f64)))
                .collect();
            let mut t = Trajectory {
                trajectory_id,
                camera_id: camera_id.clone(),
                boxes,
                start_time: p.entry as f64 / cfg.fps,
                end_time: p.exit as f64 / cfg.fps,
                feature: features[p.vehicle].clone(),
                frame_features: Vec::new(),
                orientation: [0.0, 0.0],
            };
            t.orientation = compute_orientation(&t);
            trajs.push(t);
            visits[p.vehicle].push(Visit {
                camera_id: camera_id.clone(),
                trajectory_id,
                entry_frame: p.entry,
                exit_frame: p.exit,
            });
            tracks.push((p, lane));
        }
        trajectories.insert(camera_id, trajs);
        cam_tracks.insert(cam, tracks);
    }
    for v in &mut visits {
        v.sort_by_key(|s| s.entry_frame);
    }

    let mut detections = BTreeMap::new();
    let mut metas = BTreeMap::new();
    for (cam, camera) in graph.cameras.iter().enumerate() {
        let mut crng = ChaCha8Rng::seed_from_u64(cfg.seed);
        crng.set_stream(cam as u64 + 1);
        let tracks = cam_tracks.get(&cam).map(Vec::as_slice).unwrap_or(&[]);
        detections.insert(
            camera.camera_id.clone(),
            camera_detections(cfg, &camera.camera_id, tracks, &features, &mut crng),
        );
        metas.insert(
            camera.camera_id.clone(),
            CameraVideoMeta {
                camera_id: camera.camera_id.clone(),
                clip_uri: format!("file:///clips/{}.mp4", camera.camera_id),
                frame_count: cfg.frames_per_camera,
                width: cfg.image_width,
                height: cfg.image_height,
                fps: cfg.fps,
            },
        );
    }

    let vehicles = visits
        .into_iter()
        .enumerate()
        .map(|(v, visits)| VehicleTruth {
            vehicle_id: v as u64 + 1,
            base_feature: features[v].clone(),
            visits,
        })
        .collect();
    Ok(Scenario {
        config: cfg.clone(),
        graph,
        metas,
        ground_truth: GroundTruth { vehicles, trajectories },
        detections,
    })
}

fn camera_detections(
    cfg: &ScenarioConfig,
    camera_id: &CameraId,
    tracks: &[(&Pass, Lane)],
    features: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Vec<Detection> {
    let n = &cfg.noise;
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let jitter = (n.box_jitter > 0.0).then(|| Normal::new(0.0, n.box_jitter).expect("finite sigma"));
    let fnoise = (n.feature_noise > 0.0).then(|| Normal::new(0.0, n.feature_noise).expect("finite sigma"));
    let fp = (n.false_positive_rate > 0.0).then(|| Poisson::new(n.false_positive_rate).expect("positive rate"));
    let mut out = Vec::new();
    for frame in 0..cfg.frames_per_camera {
        for (pass, lane) in tracks.iter().filter(|(p, _)| p.entry <= frame && frame <= p.exit) {
            if n.dropout > 0.0 && rng.random_bool(n.dropout) {
                continue;
            }
            let truth = lane.box_at(pass, frame, w);
            let bbox = match &jitter {
                None => truth,
                Some(d) => {
                    let c = truth.as_array().map(|v| v + d.sample(rng));
                    BoundingBox::new(c[0].min(c[2]), c[1].min(c[3]), c[0].max(c[2]), c[1].max(c[3]))
                        .map_or(truth, |b| ingest::representable(&b.clamp_to(w, h)))
                }
            };
            let base = &features[pass.vehicle];
            let feature = match &fnoise {
                None => base.iter().map(|&x| x as f32).collect(),
                Some(d) => {
                    let mut f: Vec<f64> = base.iter().map(|&x| x + d.sample(rng)).collect();
                    l2_normalize(&mut f);
                    f.into_iter().map(|x| x as f32).collect()
                }
            };
            let confidence = if jitter.is_none() && fnoise.is_none() {
                0.9
            } else {
                rng.random_range(0.5..1.0)
            };
            out.push(Detection {
                camera_id: camera_id.clone(),
                frame,
                bbox,
                confidence,
                feature,
                detection_id: 0,
            });
        }
        if let Some(p) = &fp {
            let k = p.sample(rng) as usize;
            for _ in 0..k {
                let bw = rng.random_range(30.0..150.0);
                let bh = rng.random_range(20.0..80.0);
                let x = rng.random_range(0.0..w - bw);
                let y = rng.random_range(0.0..h - bh);
                let feature = random_unit(rng, cfg.feature_dim).into_iter().map(|x| x as f32).collect();
                out.push(Detection {
                    camera_id: camera_id.clone(),
                    frame,
                    bbox: ingest::representable(&BoundingBox {
                        x1: x,
                        y1: y,
                        x2: x + bw,
                        y2: y + bh,
                    }),
                    confidence: rng.random_range(0.05..0.5),
                    feature,
                    detection_id: 0,
                });
            }
        }
    }
    for (i, d) in out.iter_mut().enumerate() {
        d.detection_id = i as u32;
    }
    out
}

impl Scenario {
    pub fn camera_ids(&self) -> impl Iterator<Item = &CameraId> {
        self.metas.keys()
    }

    /// Writes `graph.json`, `ground_truth.json`, `scenario.json` and per
    /// camera `<id>.csv`, `<id>.feat` and `<id>.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| ScenarioError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let put = |name: &str, bytes: Vec<u8>| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io(&path))
        };
        put("scenario.json", pretty_json(&self.config))?;
        put("graph.json", self.graph.to_json().into_bytes())?;
        put("ground_truth.json", pretty_json(&self.ground_truth))?;
        for (cam, dets) in &self.detections {
            ingest::write_detections(&dir.join(format!("{cam}.csv")), dets)?;
            self.metas[cam].save(&dir.join(format!("{cam}.json")))?;
        }
        Ok(())
    }

    /// Runs sampling, tracking and interpolation on every camera.
    pub fn track(
        &self,
        sampling: &SamplingConfig,
        assoc: &AssociationConfig,
    ) -> Result<BTreeMap<CameraId, Vec<Trajectory>>> {
        sampling.validate()?;
        let mut out = BTreeMap::new();
        for (cam, dets) in &self.detections {
            let meta = &self.metas[cam];
            let kept = ingest::sample_and_filter(dets, sampling);
            let frames = ingest::key_frames(&kept, sampling.interval, meta.frame_count);
            let trajs = tracker::track_camera(&frames, sampling.interval, assoc, sampling.fps)?;
            out.insert(cam.clone(), trajs);
        }
        Ok(out)
    }

    /// Tracks at `interval` and scores the result against ground truth.
    pub fn evaluate(&self, interval: u32, assoc: &AssociationConfig, eval: &EvalConfig) -> Result<EvalReport> {
        let sampling = SamplingConfig {
            interval,
            fps: self.config.fps,
            ..SamplingConfig::default()
        };
        let preds = self.track(&sampling, assoc)?;
        Ok(evaluate::evaluate("synthetic", &preds, &self.ground_truth.trajectories, eval)?)
    }

    /// Annotation store with every true trajectory and every true
    /// correspondence already matched.
    pub fn annotated_store(&self) -> Result<AnnotationStore> {
        let mut store = AnnotationStore::new();
        for meta in self.metas.values() {
            store.register_camera(meta.clone(), "scenario")?;
        }
        for (cam, trajs) in &self.ground_truth.trajectories {
            for t in trajs {
                store.register_trajectory(TrajectoryRecord::from_trajectory(t, &self.metas[cam].clip_uri), "scenario")?;
            }
        }
        for v in &self.ground_truth.vehicles {
            let refs: Vec<TrajRef> = v
                .visits
                .iter()
                .map(|s| TrajRef {
                    camera_id: s.camera_id.clone(),
                    trajectory_id: s.trajectory_id,
                })
                .collect();
            for pair in refs.windows(2) {
                store.submit_match(&pair[0], &pair[1], "scenario", None)?;
            }
        }
        Ok(store)
    }
}

fn pretty_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("value serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub interval: u32,
    /// Fastest of the repeated runs, seconds.
    pub wall_time_s: f64,
    pub precision: f64,
    pub recall: f64,
    pub predicted: usize,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("interval,wall_time_s,precision_pct,recall_pct,predicted\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.2},{:.2},{}\n",
            r.interval,
            r.wall_time_s,
            r.precision * 100.0,
            r.recall * 100.0,
            r.predicted
        ));
    }
    out
}

/// Runs the tracking pipeline once per interval and reports the fastest of
/// `repeats` runs with its precision and recall.
pub fn sweep_intervals(
    scenario: &Scenario,
    intervals: &[u32],
    assoc: &AssociationConfig,
    eval: &EvalConfig,
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(intervals.len());
    for &interval in intervals {
        if interval == 0 {
            return Err(ScenarioError::Config("intervals must be >= 1".into()));
        }
        let mut best = f64::INFINITY;
        let mut report = None;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            let r = scenario.evaluate(interval, assoc, eval)?;
            best = best.min(t0.elapsed().as_secs_f64());
            report = Some(r);
        }
        let report = report.expect("at least one run");
        rows.push(SweepRow {
            interval,
            wall_time_s: best,
            precision: report.precision,
            recall: report.recall,
            predicted: report.cameras.iter().map(|c| c.algorithm_count).sum(),
        });
    }
    Ok(rows)
}
