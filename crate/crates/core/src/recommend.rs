//! Cross-camera candidate lists for a query trajectory.
//!
//! The list is built in three stages:
//!
//! * [`time_constrained_gallery`] searches every gallery camera for
//!   trajectories whose start time falls in a window around the query's start
//!   time. For cameras whose field of view overlaps the query camera by `O`
//!   seconds the search starts `O` seconds earlier, since a vehicle may enter
//!   the downstream view before it has left the upstream one.
//! * [`topology_prune`] drops candidates on cameras that are not connected
//!   to the query camera within the hop budget, whose start offset does not
//!   fit the travel-time bounds of the connecting path, or whose traffic zone
//!   is inconsistent with a zone-transition hint.
//! * [`rank`] orders what is left.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotate::TrajectoryRecord;
use crate::geometry::cosine_distance;
use crate::ids::{CameraId, TrajRef};
use crate::tracker::Trajectory;

/// Slack for comparisons of times derived from frame indices.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecommendError {
    #[error("unknown camera {0}")]
    UnknownCamera(CameraId),
    #[error("invalid time window [{min}, {max}]")]
    InvalidWindow { min: f64, max: f64 },
    #[error("unknown ranking mode {0:?}")]
    UnknownMode(String),
    #[error("invalid camera graph: {0}")]
    Graph(String),
}

pub type Result<T> = std::result::Result<T, RecommendError>;

/// What the recommender needs to know about a trajectory.
pub trait Tracklet {
    fn traj_ref(&self) -> TrajRef;
    fn camera_id(&self) -> &CameraId;
    fn start_time(&self) -> f64;
    fn end_time(&self) -> f64;
    fn feature(&self) -> &[f64];
}

impl<T: Tracklet + ?Sized> Tracklet for &T {
    fn traj_ref(&self) -> TrajRef {
        (**self).traj_ref()
    }
    fn camera_id(&self) -> &CameraId {
        (**self).camera_id()
    }
    fn start_time(&self) -> f64 {
        (**self).start_time()
    }
    fn end_time(&self) -> f64 {
        (**self).end_time()
    }
    fn feature(&self) -> &[f64] {
        (**self).feature()
    }
}

impl Tracklet for Trajectory {
    fn traj_ref(&self) -> TrajRef {
        Trajectory::traj_ref(self)
    }
    fn camera_id(&self) -> &CameraId {
        &self.camera_id
    }
    fn start_time(&self) -> f64 {
        self.start_time
    }
    fn end_time(&self) -> f64 {
        self.end_time
    }
    fn feature(&self) -> &[f64] {
        &self.feature
    }
}

impl Tracklet for TrajectoryRecord {
    fn traj_ref(&self) -> TrajRef {
        TrajRef {
            camera_id: self.camera_id.clone(),
            trajectory_id: self.trajectory_id,
        }
    }
    fn camera_id(&self) -> &CameraId {
        &self.camera_id
    }
    fn start_time(&self) -> f64 {
        self.t_s
    }
    fn end_time(&self) -> f64 {
        self.t_e
    }
    fn feature(&self) -> &[f64] {
        &self.feature
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub camera_id: CameraId,
    /// Planar position in meters (or lat/lon).
    pub position: [f64; 2],
    /// Traffic area the camera watches.
    pub zone_id: u32,
}

/// Directed reachability with entry-to-entry travel-time bounds (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: CameraId,
    pub to: CameraId,
    pub tt_min: f64,
    pub tt_max: f64,
}

/// Seconds during which both cameras see the same stretch of road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub a: CameraId,
    pub b: CameraId,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraGraph {
    pub cameras: Vec<Camera>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub overlaps: Vec<Overlap>,
}

impl CameraGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text).map_err(|e| RecommendError::Graph(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for c in &self.cameras {
            if !ids.insert(&c.camera_id) {
                return Err(RecommendError::Graph(format!("duplicate camera {}", c.camera_id)));
            }
        }
        for e in &self.edges {
            for id in [&e.from, &e.to] {
                if !ids.contains(id) {
                    return Err(RecommendError::Graph(format!("edge references unknown camera {id}")));
                }
            }
            if !(e.tt_min <= e.tt_max) {
                return Err(RecommendError::Graph(format!(
                    "edge {} -> {} has travel time [{}, {}]",
                    e.from, e.to, e.tt_min, e.tt_max
                )));
            }
        }
        for o in &self.overlaps {
            for id in [&o.a, &o.b] {
                if !ids.contains(id) {
                    return Err(RecommendError::Graph(format!("overlap references unknown camera {id}")));
                }
            }
            if !(o.seconds >= 0.0) {
                return Err(RecommendError::Graph(format!(
                    "overlap {} / {} is negative",
                    o.a, o.b
                )));
            }
        }
        Ok(())
    }

    pub fn camera(&self, id: &CameraId) -> Option<&Camera> {
        self.cameras.iter().find(|c| &c.camera_id == id)
    }

    pub fn contains(&self, id: &CameraId) -> bool {
        self.camera(id).is_some()
    }

    /// Field-of-view overlap between two cameras, 0 when none is recorded.
    pub fn overlap(&self, a: &CameraId, b: &CameraId) -> f64 {
        self.overlaps
            .iter()
            .find(|o| (&o.a == a && &o.b == b) || (&o.a == b && &o.b == a))
            .map_or(0.0, |o| o.seconds)
    }

    /// Returns a copy with every overlap removed.
    pub fn without_overlaps(&self) -> Self {
        Self {
            overlaps: Vec::new(),
            ..self.clone()
        }
    }

    pub fn out_edges<'a>(&'a self, from: &'a CameraId) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| &e.from == from)
    }

    /// Cumulative `[min, max]` travel-time bounds of every simple directed
    /// path from `from` to `to` with at most `hops` edges.
    pub fn path_bounds(&self, from: &CameraId, to: &CameraId, hops: usize) -> Vec<(f64, f64)> {
        fn walk<'a>(
            g: &'a CameraGraph,
            at: &'a CameraId,
            to: &CameraId,
            hops: usize,
            acc: (f64, f64),
            visited: &mut Vec<&'a CameraId>,
            out: &mut Vec<(f64, f64)>,
        ) {
            if hops == 0 {
                return;
            }
            for e in g.out_edges(at) {
                if visited.contains(&&e.to) {
                    continue;
                }
                let next = (acc.0 + e.tt_min, acc.1 + e.tt_max);
                if &e.to == to {
                    out.push(next);
                    continue;
                }
                visited.push(&e.to);
                walk(g, &e.to, to, hops - 1, next, visited, out);
                visited.pop();
            }
        }
        let mut out = Vec::new();
        if from != to {
            walk(self, from, to, hops, (0.0, 0.0), &mut vec![from], &mut out);
        }
        out
    }

    /// Zones lying on some directed zone path from `from_zone` to `to_zone`.
    pub fn zones_between(&self, from_zone: u32, to_zone: u32) -> BTreeSet<u32> {
        let zone_of: BTreeMap<&CameraId, u32> =
            self.cameras.iter().map(|c| (&c.camera_id, c.zone_id)).collect();
        let mut succ: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        let mut pred: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for e in &self.edges {
            let (a, b) = (zone_of[&e.from], zone_of[&e.to]);
            succ.entry(a).or_default().insert(b);
            pred.entry(b).or_default().insert(a);
        }
        let reach = |start: u32, adj: &BTreeMap<u32, BTreeSet<u32>>| {
            let mut seen = BTreeSet::from([start]);
            let mut stack = vec![start];
            while let Some(z) = stack.pop() {
                for &n in adj.get(&z).into_iter().flatten() {
                    if seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
            seen
        };
        let forward = reach(from_zone, &succ);
        let backward = reach(to_zone, &pred);
        forward.intersection(&backward).copied().collect()
    }
}

/// Offsets `[min, max]` (seconds) of a gallery start time relative to the
/// search start. `min` may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub min: f64,
    pub max: f64,
}

impl TimeWindow {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min <= max) {
            return Err(RecommendError::InvalidWindow { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.min && d <= self.max
    }
}

/// A gallery trajectory inside the search window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalleryHit<'a, T> {
    pub trajectory: &'a T,
    /// Start time minus the search start.
    pub time_offset: f64,
}

/// Windowed, sorted gallery of one camera.
///
/// Returns every `j` with `min <= st_j - st_sch <= max`, ascending by that
/// offset, ties by trajectory id.
pub fn csg<'a, T: Tracklet>(st_sch: f64, gallery: &'a [T], window: &TimeWindow) -> Vec<GalleryHit<'a, T>> {
    let mut hits: Vec<GalleryHit<'a, T>> = gallery
        .iter()
        .map(|t| GalleryHit {
            trajectory: t,
            time_offset: t.start_time() - st_sch,
        })
        .filter(|h| window.contains(h.time_offset))
        .collect();
    hits.sort_by(|a, b| {
        a.time_offset
            .total_cmp(&b.time_offset)
            .then_with(|| a.trajectory.traj_ref().cmp(&b.trajectory.traj_ref()))
    });
    hits
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<'a, T> {
    pub trajectory: &'a T,
    pub camera_id: CameraId,
    /// `st_j - st_sch`.
    pub time_offset: f64,
    /// Start of the search on this camera (query start minus overlap).
    pub search_start: f64,
    /// Cosine distance between the query and candidate features.
    pub appearance_distance: f64,
}

impl<T: Tracklet> Candidate<'_, T> {
    pub fn traj_ref(&self) -> TrajRef {
        self.trajectory.traj_ref()
    }

    /// Candidate start time minus query start time.
    pub fn entry_offset(&self, query: &impl Tracklet) -> f64 {
        self.trajectory.start_time() - query.start_time()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GalleryOptions {
    /// Widen the upper bound by the query's own duration (`et - st`).
    #[serde(default)]
    pub extend_by_query_duration: bool,
}

/// Union over gallery cameras of the windowed galleries, each searched from
/// the query start shifted back by the camera's overlap with the query
/// camera. The query trajectory itself is never returned.
pub fn time_constrained_gallery<'a, T: Tracklet>(
    query: &impl Tracklet,
    graph: &CameraGraph,
    gallery_cams: &[CameraId],
    per_cam_galleries: &'a BTreeMap<CameraId, Vec<T>>,
    window: &TimeWindow,
    opts: &GalleryOptions,
) -> Result<Vec<Candidate<'a, T>>> {
    let query_cam = query.camera_id();
    if !graph.contains(query_cam) {
        return Err(RecommendError::UnknownCamera(query_cam.clone()));
    }
    let window = if opts.extend_by_query_duration {
        TimeWindow {
            min: window.min,
            max: window.max + (query.end_time() - query.start_time()).max(0.0),
        }
    } else {
        *window
    };
    let query_ref = query.traj_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for cam in gallery_cams {
        if !graph.contains(cam) {
            return Err(RecommendError::UnknownCamera(cam.clone()));
        }
        let overlap = graph.overlap(cam, query_cam);
        let st_sch = if overlap > 0.0 {
            query.start_time() - overlap
        } else {
            query.start_time()
        };
        let Some(gallery) = per_cam_galleries.get(cam) else {
            continue;
        };
        for hit in csg(st_sch, gallery, &window) {
            let r = hit.trajectory.traj_ref();
            if r == query_ref || !seen.insert(r) {
                continue;
            }
            out.push(Candidate {
                trajectory: hit.trajectory,
                camera_id: cam.clone(),
                time_offset: hit.time_offset,
                search_start: st_sch,
                appearance_distance: cosine_distance(query.feature(), hit.trajectory.feature()),
            });
        }
    }
    out.sort_by(|a, b| {
        a.time_offset
            .total_cmp(&b.time_offset)
            .then_with(|| a.traj_ref().cmp(&b.traj_ref()))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyOptions {
    /// Maximum number of directed edges between query and candidate camera.
    pub hops: usize,
    /// Observed zone transition `(from, to)`; candidates outside the zones
    /// on a path between them are dropped.
    pub zone_hint: Option<(u32, u32)>,
}

impl Default for TopologyOptions {
    fn default() -> Self {
        Self {
            hops: 1,
            zone_hint: None,
        }
    }
}

/// Removes candidates that the camera network rules out.
///
/// A candidate survives when its camera is connected to the query camera by
/// a directed path of at most `hops` edges (either direction) whose summed
/// travel-time bounds, widened by the cameras' overlap, contain the start
/// offset between the two trajectories: `st_cand - st_query` for a
/// downstream candidate, `st_query - st_cand` for an upstream one.
pub fn topology_prune<'a, T: Tracklet>(
    candidates: Vec<Candidate<'a, T>>,
    query: &impl Tracklet,
    graph: &CameraGraph,
    opts: &TopologyOptions,
) -> Vec<Candidate<'a, T>> {
    let query_cam = query.camera_id();
    let allowed_zones = opts.zone_hint.map(|(a, b)| graph.zones_between(a, b));
    type Bounds = Vec<(f64, f64)>;
    let mut bounds_cache: BTreeMap<CameraId, (Bounds, Bounds)> = BTreeMap::new();
    candidates
        .into_iter()
        .filter(|c| {
            if let Some(zones) = &allowed_zones {
                match graph.camera(&c.camera_id) {
                    Some(cam) if zones.contains(&cam.zone_id) => {}
                    _ => return false,
                }
            }
            let (down, up) = bounds_cache.entry(c.camera_id.clone()).or_insert_with(|| {
                (
                    graph.path_bounds(query_cam, &c.camera_id, opts.hops),
                    graph.path_bounds(&c.camera_id, query_cam, opts.hops),
                )
            });
            let o = graph.overlap(query_cam, &c.camera_id);
            let delta = c.entry_offset(query);
            let fits = |x: f64, &(lo, hi): &(f64, f64)| x >= lo - o - TIME_EPS && x <= hi + o + TIME_EPS;
            down.iter().any(|b| fits(delta, b)) || up.iter().any(|b| fits(-delta, b))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RankMode {
    /// Ascending `|d|`.
    Time,
    /// Ascending appearance distance.
    Appearance,
    /// Ascending `alpha * |d| / scale + (1 - alpha) * appearance distance`,
    /// with `scale` the largest magnitude of the window bounds.
    Blend { alpha: f64 },
}

impl Default for RankMode {
    fn default() -> Self {
        RankMode::Blend { alpha: 0.3 }
    }
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankMode::Time => f.write_str("time"),
            RankMode::Appearance => f.write_str("appearance"),
            RankMode::Blend { alpha } => write!(f, "blend:{alpha}"),
        }
    }
}

impl FromStr for RankMode {
    type Err = RecommendError;

    /// Accepts `time`, `appearance`, `blend` or `blend:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(RankMode::Time),
            "appearance" => Ok(RankMode::Appearance),
            "blend" => Ok(RankMode::default()),
            _ => {
                let alpha = s
                    .strip_prefix("blend:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .filter(|a| (0.0..=1.0).contains(a))
                    .ok_or_else(|| RecommendError::UnknownMode(s.to_owned()))?;
                Ok(RankMode::Blend { alpha })
            }
        }
    }
}

/// Stable ranking; ties fall back to trajectory reference order.
pub fn rank<'a, T: Tracklet>(
    mut candidates: Vec<Candidate<'a, T>>,
    mode: RankMode,
    window: &TimeWindow,
) -> Vec<Candidate<'a, T>> {
    let scale = window.max.abs().max(window.min.abs());
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let key = |c: &Candidate<'a, T>| match mode {
        RankMode::Time => c.time_offset.abs(),
        RankMode::Appearance => c.appearance_distance,
        RankMode::Blend { alpha } => {
            alpha * (c.time_offset.abs() / scale) + (1.0 - alpha) * c.appearance_distance
        }
    };
    candidates.sort_by(|a, b| {
        key(a)
            .total_cmp(&key(b))
            .then_with(|| a.traj_ref().cmp(&b.traj_ref()))
    });
    candidates
}

/// Parameters of a full recommendation request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecommendOptions {
    pub window: TimeWindow,
    pub mode: RankMode,
    pub topology: TopologyOptions,
    pub gallery: GalleryOptions,
}

/// Gallery over every other camera in the graph, pruned and ranked.
pub fn recommend<'a, T: Tracklet>(
    query: &impl Tracklet,
    graph: &CameraGraph,
    per_cam_galleries: &'a BTreeMap<CameraId, Vec<T>>,
    opts: &RecommendOptions,
) -> Result<Vec<Candidate<'a, T>>> {
    let cams: Vec<CameraId> = graph
        .cameras
        .iter()
        .map(|c| c.camera_id.clone())
        .filter(|c| c != query.camera_id())
        .collect();
    let gallery = time_constrained_gallery(query, graph, &cams, per_cam_galleries, &opts.window, &opts.gallery)?;
    let pruned = topology_prune(gallery, query, graph, &opts.topology);
    Ok(rank(pruned, opts.mode, &opts.window))
}
