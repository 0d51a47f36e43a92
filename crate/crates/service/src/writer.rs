//! The single serialized write path over the annotation store.
//!
//! All mutations go through one task fed by a FIFO channel. Readers share
//! the store behind a read-write lock that only the writer task ever takes
//! for writing. Every accepted write is appended to the event log before the
//! caller hears back.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use mtmc_core::annotate::{AnnotateError, AnnotationRecord, AnnotationStore, Event, TrajectoryRecord, UnmatchOutcome};
use mtmc_core::ids::{GlobalId, TrajRef};
use mtmc_core::ingest::CameraVideoMeta;
use serde::Serialize;
use tokio::sync::{mpsc, oneshot, RwLock, RwLockReadGuard};
use tokio::task::JoinHandle;

use crate::error::ServiceError;

const QUEUE_DEPTH: usize = 1024;

#[derive(Debug, Clone)]
pub enum WriteOp {
    Match {
        query: TrajRef,
        candidate: TrajRef,
        expected_version: Option<u64>,
    },
    Unmatch {
        trajectory: TrajRef,
        expected_version: Option<u64>,
    },
    RegisterCamera(CameraVideoMeta),
    RegisterTrajectories(Vec<TrajectoryRecord>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WriteOutcome {
    Updated { record: AnnotationRecord },
    Deleted { global_id: GlobalId },
    Registered { added: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteReply {
    pub outcome: WriteOutcome,
    /// Store sequence number after the write.
    pub seq: u64,
}

/// A write refused because its version token was stale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedWrite {
    /// Sequence number of the last event applied when the write was judged.
    pub after_seq: u64,
    pub trajectory: TrajRef,
    pub expected: u64,
    pub current: u64,
}

struct WriteRequest {
    op: WriteOp,
    user: String,
    reply: oneshot::Sender<Result<WriteReply, AnnotateError>>,
}

struct EventLog {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl EventLog {
    fn append(&mut self, events: &[Event]) -> std::io::Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

/// Cloneable access to the store: reads directly, writes via the queue.
#[derive(Clone)]
pub struct StoreHandle {
    state: Arc<RwLock<AnnotationStore>>,
    tx: mpsc::Sender<WriteRequest>,
    rejections: Arc<Mutex<Vec<RejectedWrite>>>,
}

impl StoreHandle {
    /// Starts the writer task over an in-memory store.
    pub fn spawn(store: AnnotationStore) -> (Self, JoinHandle<()>) {
        Self::start(store, None)
    }

    /// Restores the store from the event log at `log_path` (if any) and
    /// starts a writer that appends to it.
    pub fn open(log_path: PathBuf, allow_revisits: bool, fsync: bool) -> Result<(Self, JoinHandle<()>), ServiceError> {
        Self::open_with(log_path, AnnotationStore::new().with_revisits(allow_revisits), fsync)
    }

    /// Like [`StoreHandle::open`], but replays into `base`, which carries the
    /// clock and revisit policy.
    pub fn open_with(
        log_path: PathBuf,
        mut base: AnnotationStore,
        fsync: bool,
    ) -> Result<(Self, JoinHandle<()>), ServiceError> {
        if let Some(dir) = log_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ServiceError::Internal(format!("{}: {e}", dir.display())))?;
        }
        if log_path.exists() {
            let file = File::open(&log_path).map_err(|e| ServiceError::Internal(format!("{}: {e}", log_path.display())))?;
            for e in AnnotationStore::read_log(std::io::BufReader::new(file))? {
                base.apply_event(&e)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", log_path.display())))?;
        let log = EventLog {
            path: log_path,
            file,
            fsync,
        };
        Ok(Self::start(base, Some(log)))
    }

    fn start(store: AnnotationStore, log: Option<EventLog>) -> (Self, JoinHandle<()>) {
        let (tx, rx) = mpsc::channel(QUEUE_DEPTH);
        let handle = StoreHandle {
            state: Arc::new(RwLock::new(store)),
            tx,
            rejections: Arc::default(),
        };
        let task = tokio::spawn(writer_loop(handle.state.clone(), handle.rejections.clone(), rx, log));
        (handle, task)
    }

    pub async fn read(&self) -> RwLockReadGuard<'_, AnnotationStore> {
        self.state.read().await
    }

    /// Queues a write and waits for the writer's verdict.
    pub async fn write(&self, op: WriteOp, user: &str) -> Result<WriteReply, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(WriteRequest {
                op,
                user: user.to_owned(),
                reply,
            })
            .await
            .map_err(|_| ServiceError::Unavailable("writer stopped".into()))?;
        let res = rx
            .await
            .map_err(|_| ServiceError::Unavailable("writer dropped the request".into()))?;
        res.map_err(ServiceError::from)
    }

    /// Version-conflict rejections so far, in processing order.
    pub fn rejections(&self) -> Vec<RejectedWrite> {
        self.rejections.lock().expect("rejections lock").clone()
    }
}

async fn writer_loop(
    state: Arc<RwLock<AnnotationStore>>,
    rejections: Arc<Mutex<Vec<RejectedWrite>>>,
    mut rx: mpsc::Receiver<WriteRequest>,
    mut log: Option<EventLog>,
) {
    while let Some(req) = rx.recv().await {
        let mut store = state.write().await;
        let before = store.events().len();
        let res = apply(&mut store, req.op.clone(), &req.user);
        if let Err(AnnotateError::VersionConflict { expected, current }) = &res {
            let trajectory = match &req.op {
                WriteOp::Match { query, .. } => query.clone(),
                WriteOp::Unmatch { trajectory, .. } => trajectory.clone(),
                _ => unreachable!("only matches carry versions"),
            };
            rejections.lock().expect("rejections lock").push(RejectedWrite {
                after_seq: store.seq(),
                trajectory,
                expected: *expected,
                current: *current,
            });
        }
        let res = match (res, log.as_mut()) {
            (Ok(reply), Some(log)) => match log.append(&store.events()[before..]) {
                Ok(()) => Ok(reply),
                Err(e) => {
                    // The write was not made durable: fall back to what the
                    // log holds so memory never runs ahead of disk.
                    tracing::error!(path = %log.path.display(), error = %e, "event log append failed");
                    let revisits = store.allows_revisits();
                    let mut fresh = AnnotationStore::new().with_revisits(revisits);
                    let durable = &store.events()[..before];
                    for ev in durable {
                        fresh.apply_event(ev).expect("durable prefix replays");
                    }
                    *store = fresh;
                    Err(AnnotateError::Io {
                        path: log.path.clone(),
                        source: e,
                    })
                }
            },
            (res, _) => res,
        };
        drop(store);
        let _ = req.reply.send(res);
    }
}

fn apply(store: &mut AnnotationStore, op: WriteOp, user: &str) -> Result<WriteReply, AnnotateError> {
    let outcome = match op {
        WriteOp::Match {
            query,
            candidate,
            expected_version,
        } => WriteOutcome::Updated {
            record: store.submit_match(&query, &candidate, user, expected_version)?,
        },
        WriteOp::Unmatch {
            trajectory,
            expected_version,
        } => match store.unmatch(&trajectory, user, expected_version)? {
            UnmatchOutcome::Updated(record) => WriteOutcome::Updated { record },
            UnmatchOutcome::Deleted(global_id) => WriteOutcome::Deleted { global_id },
        },
        WriteOp::RegisterCamera(meta) => WriteOutcome::Registered {
            added: store.register_camera(meta, user)? as usize,
        },
        WriteOp::RegisterTrajectories(records) => {
            // Validate the whole batch first so a bad record leaves no
            // partial registration behind.
            for r in &records {
                if let Some(existing) = store.trajectory(&r.traj_ref()) {
                    if existing != r {
                        return Err(AnnotateError::Input(format!(
                            "trajectory {} already registered with different content",
                            r.traj_ref()
                        )));
                    }
                }
            }
            let mut added = 0;
            for r in records {
                added += store.register_trajectory(r, user)? as usize;
            }
            WriteOutcome::Registered { added }
        }
    };
    Ok(WriteReply {
        outcome,
        seq: store.seq(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mtmc_core::geometry::BoundingBox;
    use mtmc_core::ids::CameraId;

    fn traj(cam: &str, id: u64) -> TrajectoryRecord {
        TrajectoryRecord {
            trajectory_id: id,
            camera_id: CameraId::new(cam),
            clip_uri: format!("file:///{cam}.mp4"),
            t_s: 0.0,
            t_e: 0.9,
            boxes: (0..10)
                .map(|f| (f, BoundingBox::new(f as f64, 0.0, f as f64 + 10.0, 10.0).unwrap()))
                .collect(),
            orientation: [1.0, 0.0],
            feature: vec![1.0, 0.0],
        }
    }

    #[tokio::test]
    async fn writes_are_logged_and_restored() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let (h, _task) = StoreHandle::open(log.clone(), false, false).unwrap();
        h.write(WriteOp::RegisterTrajectories(vec![traj("a", 1), traj("b", 1)]), "u")
            .await
            .unwrap();
        let r = h
            .write(
                WriteOp::Match {
                    query: TrajRef::new("a", 1),
                    candidate: TrajRef::new("b", 1),
                    expected_version: Some(0),
                },
                "u",
            )
            .await
            .unwrap();
        assert_eq!(r.seq, 3);
        let stale = h
            .write(
                WriteOp::Unmatch {
                    trajectory: TrajRef::new("a", 1),
                    expected_version: Some(0),
                },
                "u",
            )
            .await;
        assert!(matches!(stale, Err(ServiceError::Conflict { expected: 0, current: 1 })));
        assert_eq!(h.rejections().len(), 1);
        let partition = h.read().await.partition();

        let (again, _t) = StoreHandle::open(log, false, false).unwrap();
        assert_eq!(again.read().await.partition(), partition);
        assert_eq!(again.read().await.seq(), 3);
    }

    #[tokio::test]
    async fn conflicting_batch_registers_nothing() {
        let (h, _task) = StoreHandle::spawn(AnnotationStore::new());
        h.write(WriteOp::RegisterTrajectories(vec![traj("a", 1)]), "u").await.unwrap();
        let mut changed = traj("a", 1);
        changed.t_e = 5.0;
        let err = h
            .write(WriteOp::RegisterTrajectories(vec![traj("a", 2), changed]), "u")
            .await
            .unwrap_err();
        assert!(matches!(err, ServiceError::Unprocessable(_)));
        assert!(h.read().await.trajectory(&TrajRef::new("a", 2)).is_none());
        let dup = h.write(WriteOp::RegisterTrajectories(vec![traj("a", 1)]), "u").await.unwrap();
        assert_eq!(dup.outcome, WriteOutcome::Registered { added: 0 });
    }
}
