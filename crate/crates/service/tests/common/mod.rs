#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mtmc_core::annotate::{AnnotationStore, TrajectoryRecord};
use mtmc_core::geometry::BoundingBox;
use mtmc_core::ids::CameraId;
use mtmc_core::ingest::CameraVideoMeta;
use mtmc_core::recommend::{Camera, CameraGraph, Edge};
use mtmc_service::{InMemoryBroker, Service, ServiceConfig};
use serde::de::DeserializeOwned;
use tower::ServiceExt;

pub struct Resp {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl Resp {
    pub fn json<T: DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn value(&self) -> serde_json::Value {
        self.json()
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, user: Option<&str>, body: Option<serde_json::Value>) -> Resp {
    call_raw(app, method, uri, user, body.map(|b| b.to_string())).await
}

pub async fn call_raw(app: &Router, method: Method, uri: &str, user: Option<&str>, body: Option<String>) -> Resp {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(u) = user {
        req = req.header("x-user", u);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    Resp { status, headers, body }
}

pub fn config(store: &Path, workers: usize) -> ServiceConfig {
    let mut cfg = ServiceConfig {
        store_path: store.to_owned(),
        fsync: false,
        ..Default::default()
    };
    cfg.pipeline.workers = workers;
    cfg
}

pub fn fixed_clock_store() -> AnnotationStore {
    AnnotationStore::new().with_clock(|| 1_700_000_000_000)
}

pub fn start(cfg: &ServiceConfig, graph: CameraGraph) -> (Service, Arc<InMemoryBroker>) {
    let broker = InMemoryBroker::new();
    let svc = Service::start_with(cfg, broker.clone(), graph, fixed_clock_store()).unwrap();
    (svc, broker)
}

/// Waits until nothing is queued or in flight and every job is terminal.
pub async fn wait_settled(svc: &Service, broker: &InMemoryBroker) {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        if broker.is_idle() && svc.state.pipeline.table().settled() {
            return;
        }
        assert!(Instant::now() < deadline, "pipeline did not settle: {:?}", svc.state.pipeline.table().all());
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

pub fn meta(cam: &str) -> CameraVideoMeta {
    CameraVideoMeta {
        camera_id: CameraId::new(cam),
        clip_uri: format!("file:///clips/{cam}.mp4"),
        frame_count: 3000,
        width: 1280,
        height: 960,
        fps: 10.0,
    }
}

/// Trajectory covering `[st, st + len)` seconds at 10 fps.
pub fn traj(cam: &str, id: u64, st: f64, len: f64, feature: Vec<f64>) -> TrajectoryRecord {
    let first = (st * 10.0).round() as u32;
    let n = (len * 10.0).round() as u32;
    TrajectoryRecord {
        trajectory_id: id,
        camera_id: CameraId::new(cam),
        clip_uri: format!("file:///clips/{cam}.mp4"),
        t_s: first as f64 / 10.0,
        t_e: (first + n - 1) as f64 / 10.0,
        boxes: (first..first + n)
            .map(|f| {
                let x = (f - first) as f64 * 4.0;
                (f, BoundingBox::new(x, 100.0, x + 80.0, 160.0).unwrap())
            })
            .collect(),
        orientation: [1.0, 0.0],
        feature,
    }
}

/// `a -> b -> c` line with travel times in [5, 40] s.
pub fn line_graph(cams: &[&str]) -> CameraGraph {
    CameraGraph {
        cameras: cams
            .iter()
            .enumerate()
            .map(|(i, c)| Camera {
                camera_id: CameraId::new(*c),
                position: [i as f64 * 100.0, 0.0],
                zone_id: i as u32 + 1,
            })
            .collect(),
        edges: cams
            .windows(2)
            .map(|w| Edge {
                from: CameraId::new(w[0]),
                to: CameraId::new(w[1]),
                tt_min: 5.0,
                tt_max: 40.0,
            })
            .collect(),
        overlaps: vec![],
    }
}

pub fn temp() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    (dir, store)
}
