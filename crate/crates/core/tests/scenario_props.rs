use std::collections::BTreeMap;

use mtmc_core::evaluate::EvalConfig;
use mtmc_core::ingest::{parse_detections, sample_and_filter, SamplingConfig};
use mtmc_core::scenario::{generate, sweep_intervals, NoiseConfig, ScenarioConfig, Topology};
use mtmc_core::tracker::AssociationConfig;

fn read_dir(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn noisy() -> ScenarioConfig {
    ScenarioConfig {
        seed: 5,
        n_vehicles: 12,
        n_cameras: 4,
        frames_per_camera: 900,
        overlap_seconds: 2.0,
        noise: NoiseConfig {
            box_jitter: 2.0,
            feature_noise: 0.05,
            dropout: 0.05,
            false_positive_rate: 0.3,
        },
        ..ScenarioConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&noisy()).unwrap().write(a.path()).unwrap();
    generate(&noisy()).unwrap().write(b.path()).unwrap();
    let (fa, fb) = (read_dir(a.path()), read_dir(b.path()));
    assert_eq!(fa.len(), 3 + 3 * 4);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    generate(&ScenarioConfig { seed: 6, ..noisy() }).unwrap().write(c.path()).unwrap();
    assert_ne!(read_dir(c.path()), fa);
}

#[test]
fn written_detections_parse_back() {
    let s = generate(&noisy()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.write(dir.path()).unwrap();
    for (cam, dets) in &s.detections {
        let back = parse_detections(&dir.path().join(format!("{cam}.csv")), &s.metas[cam], Some(32)).unwrap();
        assert_eq!(back.len(), dets.len());
        for (a, b) in back.iter().zip(dets) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn overlapping_edges_enter_before_exit() {
    for seed in 0..20 {
        let cfg = ScenarioConfig { seed, ..noisy() };
        let s = generate(&cfg).unwrap();
        let mut overlapping = 0;
        for v in &s.ground_truth.vehicles {
            for w in v.visits.windows(2) {
                let edge = s
                    .graph
                    .edges
                    .iter()
                    .find(|e| e.from == w[0].camera_id && e.to == w[1].camera_id)
                    .unwrap();
                let dt = (w[1].entry_frame - w[0].entry_frame) as f64 / cfg.fps;
                assert!(dt >= edge.tt_min - 1e-9 && dt <= edge.tt_max + 1e-9);
                if s.graph.overlap(&w[0].camera_id, &w[1].camera_id) > 0.0 {
                    assert!(w[1].entry_frame < w[0].exit_frame);
                    let ahead = (w[0].exit_frame - w[1].entry_frame) as f64 / cfg.fps;
                    assert!(ahead <= cfg.overlap_seconds + 1e-9);
                    overlapping += 1;
                }
            }
        }
        assert!(overlapping > 0);
    }
}

#[test]
fn without_overlap_vehicles_leave_before_arriving() {
    let s = generate(&ScenarioConfig { overlap_seconds: 0.0, ..noisy() }).unwrap();
    for v in &s.ground_truth.vehicles {
        for w in v.visits.windows(2) {
            assert!(w[0].exit_frame < w[1].entry_frame);
        }
    }
}

#[test]
fn ground_truth_boxes_stay_in_image() {
    let s = generate(&ScenarioConfig {
        topology: Topology::Grid { cols: 2 },
        ..noisy()
    })
    .unwrap();
    for trajs in s.ground_truth.trajectories.values() {
        for t in trajs {
            assert!(t.boxes.values().all(|b| b.x1 >= 0.0 && b.x2 <= 1280.0 && b.y2 <= 960.0));
            assert!(t.is_dense());
        }
    }
}

#[test]
fn false_positives_sit_below_threshold_mostly() {
    let s = generate(&noisy()).unwrap();
    let all: usize = s.detections.values().map(Vec::len).sum();
    let kept: usize = s
        .detections
        .values()
        .map(|d| sample_and_filter(d, &SamplingConfig::default()).len())
        .sum();
    assert!(kept < all);
}

#[test]
fn noiseless_interval_one_is_perfect_and_huge_interval_finds_nothing() {
    let s = generate(&ScenarioConfig::default()).unwrap();
    let rows = sweep_intervals(&s, &[1, 400], &AssociationConfig::default(), &EvalConfig::default(), 1).unwrap();
    assert_eq!(rows[0].recall, 1.0);
    assert_eq!(rows[1].recall, 0.0);
}
