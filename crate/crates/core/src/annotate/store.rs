use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{AnnotateError, Result, TrajectoryRecord};
use crate::ids::{CameraId, GlobalId, TrajRef};
use crate::ingest::CameraVideoMeta;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Create { query: TrajRef, candidate: TrajRef },
    Join { trajectory: TrajRef },
    Merge { absorbed: GlobalId },
    Unmatch { trajectory: TrajRef },
    /// Loaded from an exported dataset.
    Import,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub user: String,
    pub action: Action,
    /// Milliseconds since the Unix epoch.
    pub ts: i64,
}

/// Trajectories assigned to one physical vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub global_id: GlobalId,
    pub members: BTreeSet<TrajRef>,
    pub version: u64,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnmatchOutcome {
    Updated(AnnotationRecord),
    Deleted(GlobalId),
}

/// One line of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub op: String,
    pub payload: serde_json::Value,
    pub user: String,
    pub ts: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "snake_case")]
enum Op {
    RegisterCamera(CameraVideoMeta),
    RegisterTrajectory(TrajectoryRecord),
    Match {
        query: TrajRef,
        candidate: TrajRef,
        expected_version: Option<u64>,
    },
    Unmatch {
        trajectory: TrajRef,
        expected_version: Option<u64>,
    },
}

impl Op {
    fn into_event(self, seq: u64, user: &str, ts: i64) -> Event {
        let value = serde_json::to_value(&self).expect("op serializes");
        let op = value["op"].as_str().expect("tagged op").to_owned();
        Event {
            seq,
            op,
            payload: value["payload"].clone(),
            user: user.to_owned(),
            ts,
        }
    }

    fn from_event(e: &Event) -> Result<Self> {
        let value = serde_json::json!({ "op": e.op, "payload": e.payload });
        serde_json::from_value(value).map_err(|err| AnnotateError::Format(format!("event {}: {err}", e.seq)))
    }
}

/// Point-in-time copy of the store state, without the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub next_global: u64,
    pub allow_revisits: bool,
    pub cameras: Vec<CameraVideoMeta>,
    pub trajectories: Vec<TrajectoryRecord>,
    pub records: Vec<AnnotationRecord>,
}

type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

fn system_millis() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

/// In-memory annotation state plus its event log.
///
/// Writers are expected to be serialized by the caller; the store itself
/// is a plain value.
#[derive(Clone)]
pub struct AnnotationStore {
    cameras: BTreeMap<CameraId, CameraVideoMeta>,
    trajectories: BTreeMap<TrajRef, TrajectoryRecord>,
    records: BTreeMap<GlobalId, AnnotationRecord>,
    membership: BTreeMap<TrajRef, GlobalId>,
    next_global: u64,
    seq: u64,
    log: Vec<Event>,
    allow_revisits: bool,
    clock: Clock,
}

impl fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnnotationStore")
            .field("cameras", &self.cameras.len())
            .field("trajectories", &self.trajectories.len())
            .field("records", &self.records.len())
            .field("seq", &self.seq)
            .finish()
    }
}

impl Default for AnnotationStore {
    fn default() -> Self {
        Self::new()
    }
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self {
            cameras: BTreeMap::new(),
            trajectories: BTreeMap::new(),
            records: BTreeMap::new(),
            membership: BTreeMap::new(),
            next_global: 1,
            seq: 0,
            log: Vec::new(),
            allow_revisits: false,
            clock: Arc::new(system_millis),
        }
    }

    /// Allows several trajectories of one camera in the same identity
    /// (a vehicle passing a camera more than once).
    pub fn with_revisits(mut self, allow: bool) -> Self {
        self.allow_revisits = allow;
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> i64 + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn allows_revisits(&self) -> bool {
        self.allow_revisits
    }

    pub fn cameras(&self) -> impl Iterator<Item = &CameraVideoMeta> {
        self.cameras.values()
    }

    pub fn camera(&self, id: &CameraId) -> Option<&CameraVideoMeta> {
        self.cameras.get(id)
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.trajectories.values()
    }

    pub fn trajectory(&self, r: &TrajRef) -> Option<&TrajectoryRecord> {
        self.trajectories.get(r)
    }

    pub fn trajectories_of<'a>(&'a self, camera: &'a CameraId) -> impl Iterator<Item = &'a TrajectoryRecord> + 'a {
        self.trajectories.values().filter(move |t| &t.camera_id == camera)
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.values()
    }

    pub fn record(&self, id: GlobalId) -> Option<&AnnotationRecord> {
        self.records.get(&id)
    }

    pub fn global_id_of(&self, r: &TrajRef) -> Option<GlobalId> {
        self.membership.get(r).copied()
    }

    pub fn record_of(&self, r: &TrajRef) -> Option<&AnnotationRecord> {
        self.global_id_of(r).and_then(|g| self.records.get(&g))
    }

    /// Version token of a trajectory: the version of its identity record,
    /// or 0 when unassigned.
    pub fn version_of(&self, r: &TrajRef) -> Result<u64> {
        if !self.trajectories.contains_key(r) {
            return Err(AnnotateError::TrajectoryNotFound(r.clone()));
        }
        Ok(self.record_of(r).map_or(0, |rec| rec.version))
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty() && self.records.is_empty()
    }

    /// Member sets of all identity records.
    pub fn partition(&self) -> BTreeSet<BTreeSet<TrajRef>> {
        self.records.values().map(|r| r.members.clone()).collect()
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn register_camera(&mut self, meta: CameraVideoMeta, user: &str) -> Result<bool> {
        self.execute(Op::RegisterCamera(meta), user, None)
            .map(|r| matches!(r, Applied::Changed(_)))
    }

    /// Adds a trajectory record. Re-registering an identical record is a
    /// no-op and returns `false`.
    pub fn register_trajectory(&mut self, record: TrajectoryRecord, user: &str) -> Result<bool> {
        self.execute(Op::RegisterTrajectory(record), user, None)
            .map(|r| matches!(r, Applied::Changed(_)))
    }

    /// Declares `query` and `candidate` to be the same vehicle.
    ///
    /// When `expected_version` is given it must equal the query's current
    /// version token, otherwise nothing changes and a version conflict is
    /// returned.
    pub fn submit_match(
        &mut self,
        query: &TrajRef,
        candidate: &TrajRef,
        user: &str,
        expected_version: Option<u64>,
    ) -> Result<AnnotationRecord> {
        let op = Op::Match {
            query: query.clone(),
            candidate: candidate.clone(),
            expected_version,
        };
        match self.execute(op, user, None)? {
            Applied::Changed(Some(Outcome::Record(r))) => Ok(r),
            _ => unreachable!("match yields a record"),
        }
    }

    /// Removes `trajectory` from its identity; the identity is deleted when
    /// it loses its last member.
    pub fn unmatch(&mut self, trajectory: &TrajRef, user: &str, expected_version: Option<u64>) -> Result<UnmatchOutcome> {
        let op = Op::Unmatch {
            trajectory: trajectory.clone(),
            expected_version,
        };
        match self.execute(op, user, None)? {
            Applied::Changed(Some(Outcome::Record(r))) => Ok(UnmatchOutcome::Updated(r)),
            Applied::Changed(Some(Outcome::Deleted(g))) => Ok(UnmatchOutcome::Deleted(g)),
            _ => unreachable!("unmatch yields an outcome"),
        }
    }

    /// Re-applies a logged event. Events at or below the current sequence
    /// number are skipped.
    pub fn apply_event(&mut self, event: &Event) -> Result<()> {
        if event.seq <= self.seq {
            return Ok(());
        }
        if event.seq != self.seq + 1 {
            return Err(AnnotateError::Format(format!(
                "event log gap: expected seq {}, found {}",
                self.seq + 1,
                event.seq
            )));
        }
        let op = Op::from_event(event)?;
        self.execute(op, &event.user, Some(event.ts)).map(|_| ())
    }

    /// Rebuilds a store by replaying events in order.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>, allow_revisits: bool) -> Result<Self> {
        let mut store = Self::new().with_revisits(allow_revisits);
        for e in events {
            store.apply_event(e)?;
        }
        Ok(store)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            seq: self.seq,
            next_global: self.next_global,
            allow_revisits: self.allow_revisits,
            cameras: self.cameras.values().cloned().collect(),
            trajectories: self.trajectories.values().cloned().collect(),
            records: self.records.values().cloned().collect(),
        }
    }

    pub fn from_snapshot(s: Snapshot) -> Self {
        let mut store = Self::new().with_revisits(s.allow_revisits);
        store.seq = s.seq;
        store.next_global = s.next_global;
        store.cameras = s.cameras.into_iter().map(|c| (c.camera_id.clone(), c)).collect();
        store.trajectories = s.trajectories.into_iter().map(|t| (t.traj_ref(), t)).collect();
        for rec in s.records {
            for m in &rec.members {
                store.membership.insert(m.clone(), rec.global_id);
            }
            store.records.insert(rec.global_id, rec);
        }
        store
    }

    /// Writes the event log as JSON lines.
    pub fn write_log(&self, mut out: impl Write) -> std::io::Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_log(input: impl BufRead) -> Result<Vec<Event>> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| AnnotateError::Format(format!("log line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line)
                .map_err(|err| AnnotateError::Format(format!("log line {}: {err}", i + 1)))?;
            events.push(e);
        }
        Ok(events)
    }

    /// Loads an optional snapshot and replays the log entries after it.
    pub fn restore(snapshot_path: Option<&Path>, log_path: &Path, allow_revisits: bool) -> Result<Self> {
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| AnnotateError::Io { path, source }
        };
        let mut store = match snapshot_path.filter(|p| p.exists()) {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io(p))?;
                let snap: Snapshot =
                    serde_json::from_str(&text).map_err(|e| AnnotateError::Format(format!("snapshot: {e}")))?;
                Self::from_snapshot(snap)
            }
            None => Self::new().with_revisits(allow_revisits),
        };
        if log_path.exists() {
            let file = std::fs::File::open(log_path).map_err(io(log_path))?;
            for e in Self::read_log(std::io::BufReader::new(file))? {
                store.apply_event(&e)?;
            }
        }
        Ok(store)
    }

    fn execute(&mut self, op: Op, user: &str, ts: Option<i64>) -> Result<Applied> {
        let ts = ts.unwrap_or_else(|| (self.clock)());
        let outcome = match &op {
            Op::RegisterCamera(meta) => {
                if let Some(existing) = self.cameras.get(&meta.camera_id) {
                    if existing == meta {
                        return Ok(Applied::Unchanged);
                    }
                    return Err(AnnotateError::Input(format!(
                        "camera {} already registered with different metadata",
                        meta.camera_id
                    )));
                }
                self.cameras.insert(meta.camera_id.clone(), meta.clone());
                None
            }
            Op::RegisterTrajectory(rec) => {
                let r = rec.traj_ref();
                if let Some(existing) = self.trajectories.get(&r) {
                    if existing == rec {
                        return Ok(Applied::Unchanged);
                    }
                    return Err(AnnotateError::Input(format!(
                        "trajectory {r} already registered with different content"
                    )));
                }
                self.trajectories.insert(r, rec.clone());
                None
            }
            Op::Match {
                query,
                candidate,
                expected_version,
            } => Some(Outcome::Record(self.do_match(query, candidate, *expected_version, user, ts)?)),
            Op::Unmatch {
                trajectory,
                expected_version,
            } => Some(self.do_unmatch(trajectory, *expected_version, user, ts)?),
        };
        self.seq += 1;
        self.log.push(op.into_event(self.seq, user, ts));
        Ok(Applied::Changed(outcome))
    }

    fn check_version(&self, r: &TrajRef, expected: Option<u64>) -> Result<()> {
        let current = self.version_of(r)?;
        match expected {
            Some(v) if v != current => Err(AnnotateError::VersionConflict { expected: v, current }),
            _ => Ok(()),
        }
    }

    fn check_cameras<'a>(&self, members: impl IntoIterator<Item = &'a TrajRef>) -> Result<()> {
        if self.allow_revisits {
            return Ok(());
        }
        let mut seen = BTreeSet::new();
        for m in members {
            if !seen.insert(&m.camera_id) {
                return Err(AnnotateError::Input(format!(
                    "identity would hold two trajectories of camera {}",
                    m.camera_id
                )));
            }
        }
        Ok(())
    }

    fn do_match(
        &mut self,
        query: &TrajRef,
        candidate: &TrajRef,
        expected: Option<u64>,
        user: &str,
        ts: i64,
    ) -> Result<AnnotationRecord> {
        if query == candidate {
            return Err(AnnotateError::Input(format!("cannot match {query} with itself")));
        }
        for r in [query, candidate] {
            if !self.trajectories.contains_key(r) {
                return Err(AnnotateError::TrajectoryNotFound(r.clone()));
            }
        }
        self.check_version(query, expected)?;
        let entry = |action| HistoryEntry {
            user: user.to_owned(),
            action,
            ts,
        };

        let gid = match (self.global_id_of(query), self.global_id_of(candidate)) {
            (None, None) => {
                self.check_cameras([query, candidate])?;
                let gid = GlobalId(self.next_global);
                self.next_global += 1;
                self.records.insert(
                    gid,
                    AnnotationRecord {
                        global_id: gid,
                        members: BTreeSet::from([query.clone(), candidate.clone()]),
                        version: 1,
                        history: vec![entry(Action::Create {
                            query: query.clone(),
                            candidate: candidate.clone(),
                        })],
                    },
                );
                gid
            }
            (Some(gid), None) | (None, Some(gid)) => {
                let joining = if self.membership.contains_key(query) { candidate } else { query };
                let rec = &self.records[&gid];
                self.check_cameras(rec.members.iter().chain([joining]))?;
                let rec = self.records.get_mut(&gid).expect("record exists");
                rec.members.insert(joining.clone());
                rec.version += 1;
                rec.history.push(entry(Action::Join {
                    trajectory: joining.clone(),
                }));
                gid
            }
            (Some(a), Some(b)) if a == b => {
                return Err(AnnotateError::Input(format!(
                    "{query} and {candidate} already share identity {a}"
                )))
            }
            (Some(a), Some(b)) => {
                let (keep, absorb) = (a.min(b), a.max(b));
                self.check_cameras(self.records[&keep].members.iter().chain(&self.records[&absorb].members))?;
                let absorbed = self.records.remove(&absorb).expect("record exists");
                let rec = self.records.get_mut(&keep).expect("record exists");
                rec.version = rec.version.max(absorbed.version) + 1;
                rec.members.extend(absorbed.members.iter().cloned());
                rec.history.extend(absorbed.history);
                rec.history.push(entry(Action::Merge { absorbed: absorb }));
                keep
            }
        };
        let rec = self.records[&gid].clone();
        for m in &rec.members {
            self.membership.insert(m.clone(), gid);
        }
        Ok(rec)
    }

    fn do_unmatch(&mut self, r: &TrajRef, expected: Option<u64>, user: &str, ts: i64) -> Result<Outcome> {
        if !self.trajectories.contains_key(r) {
            return Err(AnnotateError::TrajectoryNotFound(r.clone()));
        }
        let gid = self.global_id_of(r).ok_or_else(|| AnnotateError::NotAssigned(r.clone()))?;
        self.check_version(r, expected)?;
        self.membership.remove(r);
        let rec = self.records.get_mut(&gid).expect("record exists");
        rec.members.remove(r);
        if rec.members.is_empty() {
            self.records.remove(&gid);
            return Ok(Outcome::Deleted(gid));
        }
        rec.version += 1;
        rec.history.push(HistoryEntry {
            user: user.to_owned(),
            action: Action::Unmatch { trajectory: r.clone() },
            ts,
        });
        Ok(Outcome::Record(rec.clone()))
    }
}

enum Outcome {
    Record(AnnotationRecord),
    Deleted(GlobalId),
}

enum Applied {
    Changed(Option<Outcome>),
    Unchanged,
}
