//! Pipeline workers: ingest → track → feature → index, one chain per
//! camera.
//!
//! A worker consumes a message, persists the stage result to
//! `<results>/<job_id>.json` (temp file plus rename), publishes the next
//! stage and only then acknowledges. A redelivered job whose result file
//! exists is not processed again; it only re-publishes its successor, so a
//! crash anywhere in that sequence converges to the same persisted state.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use mtmc_core::annotate::TrajectoryRecord;
use mtmc_core::ids::{CameraId, TrajRef};
use mtmc_core::ingest::{self, CameraVideoMeta, Detection, SamplingConfig};
use mtmc_core::tracker::{self, Trajectory};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;

use crate::broker::{Broker, Delivery, JobKind, JobMessage};
use crate::config::PipelineConfig;
use crate::error::ServiceError;
use crate::writer::{StoreHandle, WriteOp};

/// User recorded in the store history for pipeline registrations.
pub const PIPELINE_USER: &str = "pipeline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub kind: JobKind,
    pub camera_id: CameraId,
    pub state: JobState,
    /// Deliveries started, counting retries but not duplicates.
    pub attempts: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Default)]
pub struct JobTable {
    jobs: Mutex<BTreeMap<String, JobStatus>>,
}

impl JobTable {
    pub fn get(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().expect("job table").get(id).cloned()
    }

    pub fn all(&self) -> Vec<JobStatus> {
        self.jobs.lock().expect("job table").values().cloned().collect()
    }

    /// Registers a queued job; returns false when the id is already known.
    fn insert_queued(&self, msg: &JobMessage) -> bool {
        let mut jobs = self.jobs.lock().expect("job table");
        if jobs.contains_key(&msg.job_id) {
            return false;
        }
        jobs.insert(
            msg.job_id.clone(),
            JobStatus {
                job_id: msg.job_id.clone(),
                kind: msg.kind,
                camera_id: msg.camera_id.clone(),
                state: JobState::Queued,
                attempts: 0,
                error: None,
            },
        );
        true
    }

    fn update(&self, msg: &JobMessage, f: impl FnOnce(&mut JobStatus)) {
        let mut jobs = self.jobs.lock().expect("job table");
        let entry = jobs.entry(msg.job_id.clone()).or_insert_with(|| JobStatus {
            job_id: msg.job_id.clone(),
            kind: msg.kind,
            camera_id: msg.camera_id.clone(),
            state: JobState::Queued,
            attempts: 0,
            error: None,
        });
        f(entry);
    }

    fn started(&self, msg: &JobMessage) {
        self.update(msg, |s| {
            s.attempts = s.attempts.max(msg.attempt);
            if s.state != JobState::Done {
                s.state = JobState::Running;
            }
        });
    }

    fn finished(&self, msg: &JobMessage, state: JobState, error: Option<String>) {
        self.update(msg, |s| {
            if s.state != JobState::Done {
                s.state = state;
                s.error = error;
            }
        });
    }

    /// All known jobs are done or dead.
    pub fn settled(&self) -> bool {
        self.jobs
            .lock()
            .expect("job table")
            .values()
            .all(|s| matches!(s.state, JobState::Done | JobState::Dead))
    }
}

/// Test hooks for provoking failures at chosen points.
type Hook = Arc<dyn Fn(&JobMessage) + Send + Sync>;

#[derive(Default)]
pub struct FaultPlan {
    crash_after_persist: Mutex<HashSet<String>>,
    fail: Mutex<HashMap<String, u32>>,
    before_process: Mutex<Option<Hook>>,
}

impl FaultPlan {
    /// The next worker to persist `job_id` stops before publishing the
    /// successor and before acknowledging, as if the process died.
    pub fn crash_after_persist(&self, job_id: &str) {
        self.crash_after_persist.lock().expect("faults").insert(job_id.to_owned());
    }

    /// The next `times` processing attempts of `job_id` fail.
    pub fn fail(&self, job_id: &str, times: u32) {
        self.fail.lock().expect("faults").insert(job_id.to_owned(), times);
    }

    /// Runs on the blocking pool right before a stage is computed.
    pub fn before_process(&self, f: impl Fn(&JobMessage) + Send + Sync + 'static) {
        *self.before_process.lock().expect("faults") = Some(Arc::new(f));
    }

    fn take_crash(&self, job_id: &str) -> bool {
        self.crash_after_persist.lock().expect("faults").remove(job_id)
    }

    fn take_failure(&self, job_id: &str) -> bool {
        let mut fail = self.fail.lock().expect("faults");
        match fail.get_mut(job_id) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }

    fn hook(&self) -> Option<Hook> {
        self.before_process.lock().expect("faults").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResult {
    pub job_id: String,
    pub camera: CameraVideoMeta,
    pub sampling: SamplingConfig,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub job_id: String,
    pub camera: CameraVideoMeta,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureResult {
    pub job_id: String,
    pub camera: CameraVideoMeta,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexResult {
    pub job_id: String,
    pub camera_id: CameraId,
    pub trajectories: Vec<TrajRef>,
}

/// Body of `POST /jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub kind: JobKind,
    pub camera_id: CameraId,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub job_id: Option<String>,
}

#[derive(Debug, thiserror::Error)]
enum JobError {
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Store(ServiceError),
}

fn failed(e: impl std::fmt::Display) -> JobError {
    JobError::Failed(e.to_string())
}

/// Job ids become file names, so they are restricted to a safe alphabet.
pub fn valid_job_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 200
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | ':'))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` through a uniquely named temp file and a rename.
pub fn persist_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp.{}.{n}", std::process::id()));
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

pub struct Pipeline {
    broker: Arc<dyn Broker>,
    store: StoreHandle,
    results_dir: PathBuf,
    settings: PipelineConfig,
    table: JobTable,
    faults: FaultPlan,
}

impl Pipeline {
    pub fn new(
        broker: Arc<dyn Broker>,
        store: StoreHandle,
        results_dir: PathBuf,
        settings: PipelineConfig,
    ) -> std::io::Result<Arc<Self>> {
        std::fs::create_dir_all(&results_dir)?;
        Ok(Arc::new(Self {
            broker,
            store,
            results_dir,
            settings,
            table: JobTable::default(),
            faults: FaultPlan::default(),
        }))
    }

    pub fn faults(&self) -> &FaultPlan {
        &self.faults
    }

    pub fn table(&self) -> &JobTable {
        &self.table
    }

    pub fn result_path(&self, job_id: &str) -> PathBuf {
        self.results_dir.join(format!("{job_id}.json"))
    }

    /// Status from memory, or `done` for a result persisted by an earlier
    /// process.
    pub fn status(&self, job_id: &str) -> Option<JobStatus> {
        if let Some(s) = self.table.get(job_id) {
            return Some(s);
        }
        if !valid_job_id(job_id) || !self.result_path(job_id).exists() {
            return None;
        }
        let kind = job_id
            .rsplit_once(':')
            .and_then(|(_, k)| k.parse().ok())
            .unwrap_or(JobKind::Ingest);
        let camera_id = self.read_camera_of(job_id, kind).unwrap_or_else(|| CameraId::new(""));
        Some(JobStatus {
            job_id: job_id.to_owned(),
            kind,
            camera_id,
            state: JobState::Done,
            attempts: 0,
            error: None,
        })
    }

    fn read_camera_of(&self, job_id: &str, kind: JobKind) -> Option<CameraId> {
        let bytes = std::fs::read(self.result_path(job_id)).ok()?;
        match kind {
            JobKind::Index => serde_json::from_slice::<IndexResult>(&bytes).ok().map(|r| r.camera_id),
            _ => serde_json::from_slice::<serde_json::Value>(&bytes)
                .ok()
                .and_then(|v| v["camera"]["camera_id"].as_str().map(CameraId::new)),
        }
    }

    /// Validates and publishes a new job. Re-posting a known id returns its
    /// current status without publishing again.
    pub async fn enqueue(&self, req: JobRequest) -> Result<JobStatus, ServiceError> {
        let job_id = match req.job_id {
            Some(id) => id,
            None => format!("{}-{}-{}", req.kind, req.camera_id, uuid::Uuid::new_v4().simple()),
        };
        if !valid_job_id(&job_id) {
            return Err(ServiceError::Unprocessable(format!("invalid job id {job_id:?}")));
        }
        if req.camera_id.as_str().is_empty() {
            return Err(ServiceError::Unprocessable("camera_id must not be empty".into()));
        }
        if let Some(s) = self.status(&job_id) {
            return Ok(s);
        }
        self.check_inputs(req.kind, &req.inputs)?;
        let msg = JobMessage {
            job_id,
            kind: req.kind,
            camera_id: req.camera_id,
            inputs: req.inputs,
            attempt: 1,
        };
        if self.table.insert_queued(&msg) {
            self.broker
                .publish(&msg)
                .await
                .map_err(|e| ServiceError::Unavailable(e.to_string()))?;
        }
        Ok(self.table.get(&msg.job_id).expect("just inserted"))
    }

    fn check_inputs(&self, kind: JobKind, inputs: &[String]) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Unprocessable(m));
        match kind {
            JobKind::Ingest => {
                let [csv, meta] = inputs else {
                    return bad("ingest takes [detections_csv, camera_meta_json]".into());
                };
                for p in [PathBuf::from(csv), ingest::feature_path(Path::new(csv)), PathBuf::from(meta)] {
                    if !p.is_file() {
                        return bad(format!("input {} does not exist", p.display()));
                    }
                }
            }
            _ => {
                let [parent] = inputs else {
                    return bad(format!("{kind} takes [parent_job_id]"));
                };
                if !valid_job_id(parent) || !self.result_path(parent).is_file() {
                    return bad(format!("no result for parent job {parent:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn spawn_workers(self: &Arc<Self>, n: usize) -> Vec<JoinHandle<()>> {
        (0..n).map(|_| tokio::spawn(self.clone().run_worker())).collect()
    }

    /// Consumes until the broker closes or an injected crash stops it.
    pub async fn run_worker(self: Arc<Self>) {
        loop {
            let delivery = match self.broker.receive().await {
                Ok(Some(d)) => d,
                Ok(None) => return,
                Err(e) => {
                    tracing::error!(error = %e, "receive failed");
                    return;
                }
            };
            if !self.handle(delivery).await {
                return;
            }
        }
    }

    /// Returns false when the worker should stop (injected crash).
    async fn handle(&self, d: Delivery) -> bool {
        let msg = d.message;
        self.table.started(&msg);
        let path = self.result_path(&msg.job_id);
        if !path.exists() {
            match self.process_and_persist(&msg, &path).await {
                Ok(()) => {
                    if self.faults.take_crash(&msg.job_id) {
                        tracing::warn!(job = %msg.job_id, "injected crash after persist");
                        return false;
                    }
                }
                Err(e) => {
                    self.fail(&msg, d.tag, e).await;
                    return true;
                }
            }
        }
        if let Some(child) = msg.child() {
            self.table.insert_queued(&child);
            if self.table.get(&child.job_id).map(|s| s.state) != Some(JobState::Done) {
                if let Err(e) = self.broker.publish(&child).await {
                    tracing::error!(job = %child.job_id, error = %e, "publishing successor failed");
                    return true;
                }
            }
        }
        self.table.finished(&msg, JobState::Done, None);
        if let Err(e) = self.broker.ack(d.tag).await {
            tracing::error!(job = %msg.job_id, error = %e, "ack failed");
        }
        true
    }

    async fn fail(&self, msg: &JobMessage, tag: u64, e: JobError) {
        let text = e.to_string();
        if msg.attempt >= self.settings.max_attempts {
            tracing::warn!(job = %msg.job_id, attempt = msg.attempt, error = %text, "job dead-lettered");
            let _ = self.broker.dead_letter(msg).await;
            self.table.finished(msg, JobState::Dead, Some(text));
        } else {
            tracing::info!(job = %msg.job_id, attempt = msg.attempt, error = %text, "job re-queued");
            self.table.finished(msg, JobState::Queued, Some(text));
            if let Err(e) = self.broker.publish(&msg.retry()).await {
                tracing::error!(job = %msg.job_id, error = %e, "re-queue failed; leaving unacked");
                return;
            }
        }
        let _ = self.broker.ack(tag).await;
    }

    async fn process_and_persist(&self, msg: &JobMessage, path: &Path) -> Result<(), JobError> {
        if self.faults.take_failure(&msg.job_id) {
            return Err(JobError::Failed("injected failure".into()));
        }
        let bytes = match msg.kind {
            JobKind::Index => self.index(msg).await?,
            _ => {
                let hook = self.faults.hook();
                let msg = msg.clone();
                let results_dir = self.results_dir.clone();
                let settings = self.settings.clone();
                tokio::task::spawn_blocking(move || {
                    if let Some(h) = hook {
                        h(&msg);
                    }
                    compute_stage(&msg, &results_dir, &settings)
                })
                .await
                .map_err(failed)??
            }
        };
        persist_atomic(path, &bytes).map_err(failed)
    }

    async fn index(&self, msg: &JobMessage) -> Result<Vec<u8>, JobError> {
        let parent: FeatureResult = read_result(&self.results_dir, single_input(msg)?)?;
        check_camera(msg, &parent.camera)?;
        self.store
            .write(WriteOp::RegisterCamera(parent.camera.clone()), PIPELINE_USER)
            .await
            .map_err(JobError::Store)?;
        let trajectories = parent.records.iter().map(|r| r.traj_ref()).collect();
        self.store
            .write(WriteOp::RegisterTrajectories(parent.records), PIPELINE_USER)
            .await
            .map_err(JobError::Store)?;
        to_bytes(&IndexResult {
            job_id: msg.job_id.clone(),
            camera_id: msg.camera_id.clone(),
            trajectories,
        })
    }
}

fn to_bytes(v: &impl Serialize) -> Result<Vec<u8>, JobError> {
    serde_json::to_vec(v).map_err(failed)
}

fn single_input(msg: &JobMessage) -> Result<&str, JobError> {
    match msg.inputs.as_slice() {
        [one] => Ok(one),
        _ => Err(JobError::Failed(format!("{} expects one input", msg.kind))),
    }
}

fn read_result<T: DeserializeOwned>(dir: &Path, job_id: &str) -> Result<T, JobError> {
    if !valid_job_id(job_id) {
        return Err(JobError::Failed(format!("invalid parent id {job_id:?}")));
    }
    let path = dir.join(format!("{job_id}.json"));
    let bytes = std::fs::read(&path).map_err(|e| JobError::Failed(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| JobError::Failed(format!("{}: {e}", path.display())))
}

fn check_camera(msg: &JobMessage, meta: &CameraVideoMeta) -> Result<(), JobError> {
    if meta.camera_id != msg.camera_id {
        return Err(JobError::Failed(format!(
            "job is for camera {} but its input describes {}",
            msg.camera_id, meta.camera_id
        )));
    }
    Ok(())
}

/// Pure stages: the same inputs always give the same bytes.
fn compute_stage(msg: &JobMessage, dir: &Path, settings: &PipelineConfig) -> Result<Vec<u8>, JobError> {
    match msg.kind {
        JobKind::Ingest => {
            let [csv, meta] = msg.inputs.as_slice() else {
                return Err(JobError::Failed("ingest expects two inputs".into()));
            };
            let camera = CameraVideoMeta::load(Path::new(meta)).map_err(failed)?;
            check_camera(msg, &camera)?;
            let sampling = settings.sampling(camera.fps);
            let all = ingest::parse_detections(Path::new(csv), &camera, None).map_err(failed)?;
            if all.iter().any(|d| d.camera_id != camera.camera_id) {
                return Err(JobError::Failed("detections belong to another camera".into()));
            }
            to_bytes(&IngestResult {
                job_id: msg.job_id.clone(),
                detections: ingest::sample_and_filter(&all, &sampling),
                camera,
                sampling,
            })
        }
        JobKind::Track => {
            let parent: IngestResult = read_result(dir, single_input(msg)?)?;
            check_camera(msg, &parent.camera)?;
            let frames = ingest::key_frames(&parent.detections, parent.sampling.interval, parent.camera.frame_count);
            let trajectories = tracker::track_camera(
                &frames,
                parent.sampling.interval,
                &settings.association,
                parent.camera.fps,
            )
            .map_err(failed)?;
            to_bytes(&TrackResult {
                job_id: msg.job_id.clone(),
                camera: parent.camera,
                trajectories,
            })
        }
        JobKind::Feature => {
            let parent: TrackResult = read_result(dir, single_input(msg)?)?;
            check_camera(msg, &parent.camera)?;
            let records = parent
                .trajectories
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.orientation = tracker::compute_orientation(&t);
                    TrajectoryRecord::from_trajectory(&t, parent.camera.clip_uri.clone())
                })
                .collect();
            to_bytes(&FeatureResult {
                job_id: msg.job_id.clone(),
                camera: parent.camera,
                records,
            })
        }
        JobKind::Index => unreachable!("index runs on the async path"),
    }
}
