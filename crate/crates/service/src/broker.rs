//! Job messages and the broker contract.
//!
//! Delivery is at-least-once: a message stays owned by the broker until it
//! is acknowledged, and unacknowledged messages are delivered again after a
//! consumer crash.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use mtmc_core::ids::CameraId;
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Ingest,
    Track,
    Feature,
    Index,
}

impl JobKind {
    /// The stage chained after this one.
    pub fn next(self) -> Option<JobKind> {
        match self {
            JobKind::Ingest => Some(JobKind::Track),
            JobKind::Track => Some(JobKind::Feature),
            JobKind::Feature => Some(JobKind::Index),
            JobKind::Index => None,
        }
    }

    /// The stage whose result this one consumes.
    pub fn previous(self) -> Option<JobKind> {
        match self {
            JobKind::Ingest => None,
            JobKind::Track => Some(JobKind::Ingest),
            JobKind::Feature => Some(JobKind::Track),
            JobKind::Index => Some(JobKind::Feature),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Ingest => "ingest",
            JobKind::Track => "track",
            JobKind::Feature => "feature",
            JobKind::Index => "index",
        }
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown job kind {0:?}")]
pub struct UnknownKind(pub String);

impl FromStr for JobKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ingest" => Ok(JobKind::Ingest),
            "track" => Ok(JobKind::Track),
            "feature" => Ok(JobKind::Feature),
            "index" => Ok(JobKind::Index),
            _ => Err(UnknownKind(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobMessage {
    pub job_id: String,
    pub kind: JobKind,
    pub camera_id: CameraId,
    /// File paths for ingest, the parent job id for later stages.
    pub inputs: Vec<String>,
    /// 1 on first publication, incremented on every retry.
    pub attempt: u32,
}

impl JobMessage {
    /// The message for the next pipeline stage, keyed `{job_id}:{kind}`.
    pub fn child(&self) -> Option<JobMessage> {
        self.kind.next().map(|kind| JobMessage {
            job_id: format!("{}:{}", self.job_id, kind),
            kind,
            camera_id: self.camera_id.clone(),
            inputs: vec![self.job_id.clone()],
            attempt: 1,
        })
    }

    pub fn retry(&self) -> JobMessage {
        JobMessage {
            attempt: self.attempt + 1,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub tag: u64,
    pub message: JobMessage,
    pub redelivered: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("broker closed")]
    Closed,
    #[error("unknown delivery tag {0}")]
    UnknownTag(u64),
    #[error("broker: {0}")]
    Transport(String),
}

#[async_trait]
pub trait Broker: Send + Sync + 'static {
    async fn publish(&self, msg: &JobMessage) -> Result<(), BrokerError>;

    /// Waits for the next message. `Ok(None)` once the broker is closed.
    async fn receive(&self) -> Result<Option<Delivery>, BrokerError>;

    async fn ack(&self, tag: u64) -> Result<(), BrokerError>;

    /// Parks a message that exhausted its attempts.
    async fn dead_letter(&self, msg: &JobMessage) -> Result<(), BrokerError>;
}

#[derive(Debug, Default)]
struct Queues {
    ready: VecDeque<(JobMessage, bool)>,
    unacked: BTreeMap<u64, JobMessage>,
    dead: Vec<JobMessage>,
    next_tag: u64,
    published: u64,
    delivered: u64,
    closed: bool,
}

/// In-process broker for tests and single-node deployments.
///
/// With [`InMemoryBroker::duplicate_deliveries`] every published message is
/// enqueued twice, which forces the duplicate-delivery path of consumers.
#[derive(Debug, Default)]
pub struct InMemoryBroker {
    queues: Mutex<Queues>,
    notify: Notify,
    duplicate: AtomicBool,
}

impl InMemoryBroker {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn duplicate_deliveries(&self, on: bool) {
        self.duplicate.store(on, Ordering::SeqCst);
    }

    /// Returns every unacknowledged message to the front of the queue, as
    /// a broker does when a consumer's connection drops.
    pub fn recover(&self) -> usize {
        let mut q = self.queues.lock().expect("broker lock");
        let unacked = std::mem::take(&mut q.unacked);
        let n = unacked.len();
        for (_, msg) in unacked.into_iter().rev() {
            q.ready.push_front((msg, true));
        }
        drop(q);
        self.notify.notify_waiters();
        n
    }

    pub fn close(&self) {
        self.queues.lock().expect("broker lock").closed = true;
        self.notify.notify_waiters();
    }

    /// No message is waiting or in flight.
    pub fn is_idle(&self) -> bool {
        let q = self.queues.lock().expect("broker lock");
        q.ready.is_empty() && q.unacked.is_empty()
    }

    pub fn dead_letters(&self) -> Vec<JobMessage> {
        self.queues.lock().expect("broker lock").dead.clone()
    }

    /// `(published, delivered)` message counts.
    pub fn counts(&self) -> (u64, u64) {
        let q = self.queues.lock().expect("broker lock");
        (q.published, q.delivered)
    }
}

#[async_trait]
impl Broker for InMemoryBroker {
    async fn publish(&self, msg: &JobMessage) -> Result<(), BrokerError> {
        let mut q = self.queues.lock().expect("broker lock");
        if q.closed {
            return Err(BrokerError::Closed);
        }
        let copies = if self.duplicate.load(Ordering::SeqCst) { 2 } else { 1 };
        for _ in 0..copies {
            q.ready.push_back((msg.clone(), false));
            q.published += 1;
        }
        drop(q);
        self.notify.notify_waiters();
        Ok(())
    }

    async fn receive(&self) -> Result<Option<Delivery>, BrokerError> {
        loop {
            let notified = self.notify.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            {
                let mut q = self.queues.lock().expect("broker lock");
                if q.closed {
                    return Ok(None);
                }
                if let Some((message, redelivered)) = q.ready.pop_front() {
                    q.next_tag += 1;
                    let tag = q.next_tag;
                    q.unacked.insert(tag, message.clone());
                    q.delivered += 1;
                    return Ok(Some(Delivery {
                        tag,
                        message,
                        redelivered,
                    }));
                }
            }
            notified.await;
        }
    }

    async fn ack(&self, tag: u64) -> Result<(), BrokerError> {
        let mut q = self.queues.lock().expect("broker lock");
        q.unacked.remove(&tag).map(|_| ()).ok_or(BrokerError::UnknownTag(tag))
    }

    async fn dead_letter(&self, msg: &JobMessage) -> Result<(), BrokerError> {
        self.queues.lock().expect("broker lock").dead.push(msg.clone());
        Ok(())
    }
}
