mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::http::{Method, StatusCode};
use common::*;
use mtmc_core::annotate::{AnnotationStore, Event};
use mtmc_core::ids::TrajRef;
use mtmc_service::api::TrajectoryView;
use mtmc_service::{Service, WriteOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tokio::sync::Barrier;

const CAMS: [&str; 4] = ["c1", "c2", "c3", "c4"];
const PER_CAM: u64 = 6;

async fn populated(dir: &std::path::Path) -> Service {
    let (svc, _b) = start(&config(dir, 1), line_graph(&CAMS));
    let mut records = Vec::new();
    for (i, cam) in CAMS.iter().enumerate() {
        svc.state.store.write(WriteOp::RegisterCamera(meta(cam)), "setup").await.unwrap();
        for id in 1..=PER_CAM {
            records.push(traj(cam, id, (i * 20 + id as usize * 30) as f64, 5.0, vec![1.0, id as f64]));
        }
    }
    svc.state.store.write(WriteOp::RegisterTrajectories(records), "setup").await.unwrap();
    svc
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn same_version_race_has_one_winner() {
    for round in 0..20 {
        let (_d, store) = temp();
        let svc = populated(&store).await;
        let app = svc.router();
        let barrier = Arc::new(Barrier::new(2));
        let tasks: Vec<_> = ["c2:1", "c3:1"]
            .into_iter()
            .map(|cand| {
                let app = app.clone();
                let barrier = barrier.clone();
                tokio::spawn(async move {
                    barrier.wait().await;
                    let body = json!({"query_id": "c1:1", "candidate_id": cand, "expected_version": 0});
                    call(&app, Method::POST, "/matches", Some(cand), Some(body)).await
                })
            })
            .collect();
        let mut statuses = Vec::new();
        for t in tasks {
            let r = t.await.unwrap();
            if r.status == StatusCode::CONFLICT {
                assert_eq!(r.value()["current_version"], 1);
            }
            statuses.push(r.status);
        }
        statuses.sort();
        assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT], "round {round}");
        let store = svc.state.store.read().await;
        assert_eq!(store.partition().len(), 1);
        assert_eq!(store.partition().iter().next().unwrap().len(), 2);
    }
}

/// Partition bookkeeping written independently of the store: matches
/// create, join or merge sets, unmatches remove one element.
#[derive(Default)]
struct Model {
    sets: Vec<BTreeSet<TrajRef>>,
}

impl Model {
    fn find(&self, t: &TrajRef) -> Option<usize> {
        self.sets.iter().position(|s| s.contains(t))
    }

    fn apply(&mut self, e: &Event) {
        let r = |k: &str| e.payload[k].as_str().unwrap().parse::<TrajRef>().unwrap();
        match e.op.as_str() {
            "match" => {
                let (q, c) = (r("query"), r("candidate"));
                match (self.find(&q), self.find(&c)) {
                    (None, None) => self.sets.push(BTreeSet::from([q, c])),
                    (Some(i), None) => {
                        self.sets[i].insert(c);
                    }
                    (None, Some(j)) => {
                        self.sets[j].insert(q);
                    }
                    (Some(i), Some(j)) => {
                        assert_ne!(i, j, "accepted a match inside one identity");
                        let moved = self.sets.remove(j.max(i));
                        self.sets[j.min(i)].extend(moved);
                    }
                }
            }
            "unmatch" => {
                let t = r("trajectory");
                let i = self.find(&t).expect("accepted unmatch of unassigned trajectory");
                self.sets[i].remove(&t);
                if self.sets[i].is_empty() {
                    self.sets.remove(i);
                }
            }
            _ => {}
        }
    }

    fn partition(&self) -> BTreeSet<BTreeSet<TrajRef>> {
        self.sets.iter().cloned().collect()
    }
}

#[derive(Debug)]
struct Outcome {
    user: String,
    op: &'static str,
    trajectory: TrajRef,
    candidate: Option<TrajRef>,
    expected: u64,
    status: StatusCode,
    seq: Option<u64>,
    current: Option<u64>,
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn randomized_writers_linearize() {
    let (_d, store) = temp();
    let svc = populated(&store).await;
    let app = svc.router();
    let registered_seq = svc.state.store.read().await.seq();
    let start = Arc::new(Barrier::new(8));

    let tasks: Vec<_> = (0..8u64)
        .map(|w| {
            let app = app.clone();
            let start = start.clone();
            tokio::spawn(async move {
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                let user = format!("writer{w}");
                let mut seen: BTreeMap<TrajRef, u64> = BTreeMap::new();
                let mut out = Vec::new();
                start.wait().await;
                for _ in 0..25 {
                    let pick = |rng: &mut ChaCha8Rng| {
                        TrajRef::new(CAMS[rng.random_range(0..CAMS.len())], rng.random_range(1..=PER_CAM))
                    };
                    let t = pick(&mut rng);
                    // Sometimes act on a remembered token, which may be stale.
                    let expected = match seen.get(&t) {
                        Some(&v) if rng.random_bool(0.4) => v,
                        _ => {
                            let v: TrajectoryView =
                                call(&app, Method::GET, &format!("/trajectories/{t}"), None, None).await.json();
                            seen.insert(t.clone(), v.version);
                            v.version
                        }
                    };
                    tokio::task::yield_now().await;
                    let (op, candidate, r) = if rng.random_bool(0.7) {
                        let mut c = pick(&mut rng);
                        while c.camera_id == t.camera_id {
                            c = pick(&mut rng);
                        }
                        let body = json!({"query_id": t, "candidate_id": c, "expected_version": expected});
                        ("match", Some(c), call(&app, Method::POST, "/matches", Some(&user), Some(body)).await)
                    } else {
                        let body = json!({"expected_version": expected});
                        let uri = format!("/matches/{t}");
                        ("unmatch", None, call(&app, Method::DELETE, &uri, Some(&user), Some(body)).await)
                    };
                    let seq = r.headers.get("x-event-seq").map(|v| v.to_str().unwrap().parse().unwrap());
                    let current = (r.status == StatusCode::CONFLICT).then(|| r.value()["current_version"].as_u64().unwrap());
                    out.push(Outcome {
                        user: user.clone(),
                        op,
                        trajectory: t,
                        candidate,
                        expected,
                        status: r.status,
                        seq,
                        current,
                    });
                }
                out
            })
        })
        .collect();
    let mut outcomes = Vec::new();
    for t in tasks {
        outcomes.extend(t.await.unwrap());
    }
    assert_eq!(outcomes.len(), 200);

    let store = svc.state.store.read().await;
    let events: Vec<Event> = store.events().to_vec();
    let accepted: Vec<&Outcome> = outcomes.iter().filter(|o| o.status == StatusCode::OK).collect();
    let conflicts: Vec<&Outcome> = outcomes.iter().filter(|o| o.status == StatusCode::CONFLICT).collect();
    assert!(!accepted.is_empty() && !conflicts.is_empty(), "ok {} / 409 {}", accepted.len(), conflicts.len());
    for o in &outcomes {
        assert!(
            matches!(o.status.as_u16(), 200 | 404 | 409 | 422),
            "unexpected status {:?}",
            o
        );
    }

    // No lost or phantom updates: acknowledged writes and logged annotation
    // events are the same set, each once, with the same content.
    let write_events: BTreeMap<u64, &Event> = events
        .iter()
        .filter(|e| e.op == "match" || e.op == "unmatch")
        .map(|e| (e.seq, e))
        .collect();
    assert_eq!(write_events.len(), accepted.len());
    assert_eq!(events.len() as u64, registered_seq + accepted.len() as u64);
    for o in &accepted {
        let e = write_events.get(&o.seq.unwrap()).expect("acknowledged write is logged");
        assert_eq!(e.op, o.op);
        assert_eq!(e.user, o.user);
        assert_eq!(e.payload["expected_version"], o.expected);
        let key = if o.op == "match" { "query" } else { "trajectory" };
        assert_eq!(e.payload[key], o.trajectory.to_string());
        if let Some(c) = &o.candidate {
            assert_eq!(e.payload["candidate"], c.to_string());
        }
    }

    // The final state is the sequential execution of the log.
    let mut model = Model::default();
    for e in &events {
        model.apply(e);
    }
    assert_eq!(model.partition(), store.partition());
    let replayed = AnnotationStore::replay(&events, false).unwrap();
    assert_eq!(replayed.snapshot(), store.snapshot());

    // Every conflict was stale at the point the writer judged it.
    let rejections = svc.state.store.rejections();
    assert_eq!(rejections.len(), conflicts.len());
    for rj in &rejections {
        let prefix = AnnotationStore::replay(events.iter().take_while(|e| e.seq <= rj.after_seq), false).unwrap();
        let version = prefix.version_of(&rj.trajectory).unwrap();
        assert_eq!(version, rj.current);
        assert_ne!(version, rj.expected);
    }
    let mut from_responses: Vec<(TrajRef, u64, u64)> = conflicts
        .iter()
        .map(|o| (o.trajectory.clone(), o.expected, o.current.unwrap()))
        .collect();
    let mut from_writer: Vec<(TrajRef, u64, u64)> =
        rejections.iter().map(|r| (r.trajectory.clone(), r.expected, r.current)).collect();
    from_responses.sort();
    from_writer.sort();
    assert_eq!(from_responses, from_writer);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn restart_restores_accepted_writes() {
    let (_d, store) = temp();
    let partition = {
        let svc = populated(&store).await;
        let app = svc.router();
        for (q, c) in [("c1:1", "c2:1"), ("c2:2", "c3:2"), ("c3:3", "c4:3")] {
            let body = json!({"query_id": q, "candidate_id": c});
            assert_eq!(call(&app, Method::POST, "/matches", None, Some(body)).await.status, StatusCode::OK);
        }
        let r = call(&app, Method::DELETE, "/matches/c4:3", None, Some(json!({"expected_version": 1}))).await;
        assert_eq!(r.status, StatusCode::OK);
        let p = svc.state.store.read().await.partition();
        p
    };
    let (svc, _b) = start(&config(&store, 1), line_graph(&CAMS));
    assert_eq!(svc.state.store.read().await.partition(), partition);
    let v: TrajectoryView = call(&svc.router(), Method::GET, "/trajectories/c3:3", None, None).await.json();
    assert_eq!(v.version, 2);
}
