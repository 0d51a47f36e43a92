//! JSON-over-HTTP API used by the annotation workbench.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, RawQuery, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mtmc_core::annotate::{
    build_overlay, export_dataset, AnnotationRecord, ExportFormat, OverlayPayload, OverlayTarget, TrajectoryRecord,
};
use mtmc_core::ids::{CameraId, GlobalId, TrajRef};
use mtmc_core::ingest::CameraVideoMeta;
use mtmc_core::recommend::{self, CameraGraph, GalleryOptions, RankMode, RecommendOptions, TimeWindow, TopologyOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RecommendDefaults;
use crate::error::{Result, ServiceError};
use crate::jobs::{JobRequest, JobStatus, Pipeline};
use crate::writer::{StoreHandle, WriteOp, WriteOutcome};

pub const USER_HEADER: &str = "x-user";
/// Sequence number of the event a write produced.
pub const SEQ_HEADER: &str = "x-event-seq";
pub const ANONYMOUS: &str = "anonymous";

#[derive(Clone)]
pub struct AppState {
    pub store: StoreHandle,
    pub graph: Arc<CameraGraph>,
    pub pipeline: Arc<Pipeline>,
    pub defaults: RecommendDefaults,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/cameras", get(list_cameras))
        .route("/cameras/{id}/trajectories", get(camera_trajectories))
        .route("/trajectories/{id}", get(get_trajectory))
        .route("/recommend", post(recommend_candidates))
        .route("/matches", post(create_match))
        .route("/matches/{trajectory_id}", axum::routing::delete(delete_match))
        .route("/overlay/{id}", get(overlay))
        .route("/export", get(export))
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(job_status))
        .with_state(state)
}

/// JSON body whose every failure, including a syntax error, is a 422.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ServiceError::Unprocessable(e.body_text()))?;
        serde_json::from_slice(&bytes)
            .map(JsonBody)
            .map_err(|e| ServiceError::Unprocessable(format!("malformed body: {e}")))
    }
}

fn user(headers: &HeaderMap) -> Result<String> {
    match headers.get(USER_HEADER) {
        None => Ok(ANONYMOUS.to_owned()),
        Some(v) => v
            .to_str()
            .ok()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .ok_or_else(|| ServiceError::Unprocessable(format!("{USER_HEADER} must be non-empty text"))),
    }
}

fn parse_ref(s: &str) -> Result<TrajRef> {
    s.parse().map_err(|e: mtmc_core::ids::ParseTrajRefError| ServiceError::Unprocessable(e.to_string()))
}

/// `key=value` pairs of a query string. Values here are ids and numbers,
/// so no percent-decoding beyond `+` is attempted.
fn query_pairs(raw: Option<String>) -> BTreeMap<String, String> {
    raw.unwrap_or_default()
        .split('&')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (k, v) = p.split_once('=').unwrap_or((p, ""));
            (k.to_owned(), v.replace('+', " "))
        })
        .collect()
}

fn query_f64(q: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match q.get(key).filter(|v| !v.is_empty()) {
        None => Ok(None),
        Some(v) => v
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| ServiceError::Unprocessable(format!("{key} must be a number of seconds"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    #[serde(flatten)]
    pub meta: CameraVideoMeta,
    pub position: Option<[f64; 2]>,
    pub zone_id: Option<u32>,
}

async fn list_cameras(State(s): State<AppState>) -> Json<Vec<CameraView>> {
    let store = s.store.read().await;
    Json(
        store
            .cameras()
            .map(|m| {
                let g = s.graph.camera(&m.camera_id);
                CameraView {
                    meta: m.clone(),
                    position: g.map(|c| c.position),
                    zone_id: g.map(|c| c.zone_id),
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trajectory_id: TrajRef,
    pub camera_id: CameraId,
    pub t_s: f64,
    pub t_e: f64,
    pub frames: usize,
    pub global_id: Option<GlobalId>,
    /// Version token to send with the next write on this trajectory.
    pub version: u64,
}

fn summary(store: &mtmc_core::annotate::AnnotationStore, t: &TrajectoryRecord) -> TrajectorySummary {
    let r = t.traj_ref();
    TrajectorySummary {
        global_id: store.global_id_of(&r),
        version: store.record_of(&r).map_or(0, |rec| rec.version),
        trajectory_id: r,
        camera_id: t.camera_id.clone(),
        t_s: t.t_s,
        t_e: t.t_e,
        frames: t.boxes.len(),
    }
}

async fn camera_trajectories(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<TrajectorySummary>>> {
    let store = s.store.read().await;
    let cam = CameraId::new(id);
    if store.camera(&cam).is_none() {
        return Err(ServiceError::NotFound(format!("camera {cam} not found")));
    }
    Ok(Json(store.trajectories_of(&cam).map(|t| summary(&store, t)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub trajectory_id: TrajRef,
    pub global_id: Option<GlobalId>,
    pub version: u64,
    pub record: TrajectoryRecord,
}

async fn get_trajectory(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<TrajectoryView>> {
    let r = parse_ref(&id)?;
    let store = s.store.read().await;
    let record = store
        .trajectory(&r)
        .ok_or_else(|| ServiceError::NotFound(format!("trajectory {r} not found")))?;
    Ok(Json(TrajectoryView {
        global_id: store.global_id_of(&r),
        version: store.record_of(&r).map_or(0, |rec| rec.version),
        trajectory_id: r,
        record: record.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub trajectory_id: TrajRef,
    pub window: TimeWindow,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub hops: Option<usize>,
    /// Observed zone transition `[from, to]`.
    #[serde(default)]
    pub zone_hint: Option<(u32, u32)>,
    #[serde(default)]
    pub extend_by_query_duration: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub trajectory_id: TrajRef,
    pub camera_id: CameraId,
    /// Start offset from the search start on the candidate's camera.
    pub d: f64,
    /// Candidate start minus query start.
    pub entry_offset: f64,
    pub appearance_distance: f64,
    pub clip_uri: String,
    pub t_s: f64,
    pub t_e: f64,
    pub global_id: Option<GlobalId>,
}

/// Ranked candidates for a query. Trajectories already in the query's
/// identity are left out; cameras missing from the graph have no
/// neighbours, so their queries return an empty list.
async fn recommend_candidates(
    State(s): State<AppState>,
    JsonBody(req): JsonBody<RecommendRequest>,
) -> Result<Json<Vec<CandidateView>>> {
    let window = TimeWindow::new(req.window.min, req.window.max).map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
    let mode: RankMode = req
        .mode
        .as_deref()
        .unwrap_or(&s.defaults.mode)
        .parse()
        .map_err(|e: recommend::RecommendError| ServiceError::Unprocessable(e.to_string()))?;
    let hops = req.hops.unwrap_or(s.defaults.hops);
    if hops == 0 {
        return Err(ServiceError::Unprocessable("hops must be >= 1".into()));
    }
    let store = s.store.read().await;
    let query = store
        .trajectory(&req.trajectory_id)
        .ok_or_else(|| ServiceError::NotFound(format!("trajectory {} not found", req.trajectory_id)))?;
    if !s.graph.contains(&query.camera_id) {
        return Ok(Json(Vec::new()));
    }
    let own = store.global_id_of(&req.trajectory_id);
    let mut galleries: BTreeMap<CameraId, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for t in store.trajectories() {
        if t.camera_id == query.camera_id || !s.graph.contains(&t.camera_id) {
            continue;
        }
        if own.is_some() && store.global_id_of(&t.traj_ref()) == own {
            continue;
        }
        galleries.entry(t.camera_id.clone()).or_default().push(t);
    }
    let opts = RecommendOptions {
        window,
        mode,
        topology: TopologyOptions {
            hops,
            zone_hint: req.zone_hint,
        },
        gallery: GalleryOptions {
            extend_by_query_duration: req.extend_by_query_duration,
        },
    };
    let ranked = recommend::recommend(query, &s.graph, &galleries, &opts)
        .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
    Ok(Json(
        ranked
            .iter()
            .map(|c| {
                let t: &TrajectoryRecord = c.trajectory;
                CandidateView {
                    trajectory_id: t.traj_ref(),
                    camera_id: c.camera_id.clone(),
                    d: c.time_offset,
                    entry_offset: c.entry_offset(query),
                    appearance_distance: c.appearance_distance,
                    clip_uri: t.clip_uri.clone(),
                    t_s: t.t_s,
                    t_e: t.t_e,
                    global_id: store.global_id_of(&t.traj_ref()),
                }
            })
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRequest {
    pub query_id: TrajRef,
    pub candidate_id: TrajRef,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

fn with_seq(seq: u64, body: impl IntoResponse) -> Response {
    let mut resp = body.into_response();
    resp.headers_mut().insert(SEQ_HEADER, HeaderValue::from(seq));
    resp
}

async fn create_match(State(s): State<AppState>, headers: HeaderMap, JsonBody(req): JsonBody<MatchRequest>) -> Result<Response> {
    let user = user(&headers)?;
    let reply = s
        .store
        .write(
            WriteOp::Match {
                query: req.query_id,
                candidate: req.candidate_id,
                expected_version: req.expected_version,
            },
            &user,
        )
        .await?;
    let WriteOutcome::Updated { record } = reply.outcome else {
        return Err(ServiceError::Internal("match produced no record".into()));
    };
    Ok(with_seq(reply.seq, Json::<AnnotationRecord>(record)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnmatchRequest {
    pub expected_version: u64,
}

async fn delete_match(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<UnmatchRequest>,
) -> Result<Response> {
    let user = user(&headers)?;
    let trajectory = parse_ref(&id)?;
    let reply = s
        .store
        .write(
            WriteOp::Unmatch {
                trajectory,
                expected_version: Some(req.expected_version),
            },
            &user,
        )
        .await?;
    Ok(with_seq(reply.seq, Json(reply.outcome)))
}

/// `<camera>:<id>` selects a trajectory, a bare integer a global id.
fn overlay_target(id: &str) -> Result<OverlayTarget> {
    if let Ok(g) = id.parse::<u64>() {
        return Ok(OverlayTarget::Global(GlobalId(g)));
    }
    parse_ref(id).map(OverlayTarget::Trajectory)
}

/// One payload per camera the target appears on.
async fn overlay(
    State(s): State<AppState>,
    Path(id): Path<String>,
    RawQuery(raw): RawQuery,
) -> Result<Json<Vec<OverlayPayload>>> {
    let target = overlay_target(&id)?;
    let q = query_pairs(raw);
    let (from, to) = (query_f64(&q, "from")?, query_f64(&q, "to")?);
    let store = s.store.read().await;
    Ok(Json(build_overlay(&store, &target, from, to)?))
}

/// Packs the export into a tar archive with fixed metadata, so equal
/// stores give equal bytes.
pub fn tar_bundle(files: &BTreeMap<String, Vec<u8>>) -> std::io::Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    for (name, bytes) in files {
        let mut header = tar::Header::new_gnu();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_cksum();
        builder.append_data(&mut header, name, bytes.as_slice())?;
    }
    builder.into_inner()
}

async fn export(State(s): State<AppState>, RawQuery(raw): RawQuery) -> Result<Response> {
    let q = query_pairs(raw);
    let format: ExportFormat = q
        .get("format")
        .map_or("mtmc", String::as_str)
        .parse()
        .map_err(|e: mtmc_core::annotate::AnnotateError| ServiceError::Unprocessable(e.to_string()))?;
    let bundle = {
        let store = s.store.read().await;
        export_dataset(&store, format)?
    };
    let bytes = tar_bundle(&bundle.files).map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-tar"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"mtmc-export.tar\""),
        ],
        bytes,
    )
        .into_response())
}

async fn create_job(State(s): State<AppState>, JsonBody(req): JsonBody<JobRequest>) -> Result<(StatusCode, Json<JobStatus>)> {
    let status = s.pipeline.enqueue(req).await?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn job_status(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<JobStatus>> {
    s.pipeline
        .status(&id)
        .map(Json)
        .ok_or_else(|| ServiceError::NotFound(format!("job {id} not found")))
}
