use std::collections::BTreeMap;

use mtmc_core::ids::{CameraId, TrajRef};
use mtmc_core::recommend::{
    csg, recommend, time_constrained_gallery, topology_prune, GalleryOptions, RankMode, RecommendOptions,
    TimeWindow, TopologyOptions, Tracklet,
};
use mtmc_core::scenario::{generate, ScenarioConfig, Topology};
use mtmc_core::tracker::Trajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bare(cam: &str, id: u64, st: f64) -> Trajectory {
    Trajectory {
        trajectory_id: id,
        camera_id: CameraId::new(cam),
        boxes: BTreeMap::new(),
        start_time: st,
        end_time: st + 1.0,
        feature: vec![1.0, 0.0],
        frame_features: Vec::new(),
        orientation: [0.0, 0.0],
    }
}

#[test]
fn csg_equals_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let gallery: Vec<Trajectory> = (0..500)
            .map(|i| bare("g", i, (rng.random_range(0..4000) as f64) / 10.0))
            .collect();
        let st = rng.random_range(0.0..400.0);
        let a = rng.random_range(-60.0..60.0);
        let w = TimeWindow::new(a, a + rng.random_range(0.0..80.0)).unwrap();
        let got: Vec<(u64, f64)> = csg(st, &gallery, &w)
            .iter()
            .map(|h| (h.trajectory.trajectory_id, h.time_offset))
            .collect();
        let mut want: Vec<(u64, f64)> = Vec::new();
        for t in &gallery {
            let d = t.start_time - st;
            if d >= w.min && d <= w.max {
                want.push((t.trajectory_id, d));
            }
        }
        want.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then(x.0.cmp(&y.0)));
        assert_eq!(got, want);
    }
}

#[test]
fn csg_window_example() {
    let gallery: Vec<Trajectory> = [90.0, 100.0, 130.0, 200.0]
        .iter()
        .enumerate()
        .map(|(i, &st)| bare("g", i as u64, st))
        .collect();
    let hits = csg(95.0, &gallery, &TimeWindow::new(0.0, 40.0).unwrap());
    let got: Vec<(f64, f64)> = hits.iter().map(|h| (h.trajectory.start_time, h.time_offset)).collect();
    assert_eq!(got, vec![(100.0, 5.0), (130.0, 35.0)]);
    assert!(csg(95.0, &Vec::<Trajectory>::new(), &TimeWindow::new(0.0, 40.0).unwrap()).is_empty());
}

fn five_camera(seed: u64) -> mtmc_core::scenario::Scenario {
    generate(&ScenarioConfig {
        seed,
        n_vehicles: 25,
        n_cameras: 5,
        frames_per_camera: 900,
        topology: if seed.is_multiple_of(2) { Topology::Line } else { Topology::Grid { cols: 5 } },
        overlap_seconds: (seed % 3) as f64 * 1.5,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

#[test]
fn gallery_union_equals_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..40 {
        let s = five_camera(seed);
        let galleries = &s.ground_truth.trajectories;
        let cams: Vec<CameraId> = s.graph.cameras.iter().map(|c| c.camera_id.clone()).collect();
        for _ in 0..5 {
            let qcam = &cams[rng.random_range(0..cams.len())];
            let Some(query) = galleries.get(qcam).and_then(|g| g.first()) else { continue };
            let gallery_cams: Vec<CameraId> = cams.iter().filter(|c| *c != qcam).cloned().collect();
            let lo = rng.random_range(-20.0..10.0);
            let window = TimeWindow::new(lo, lo + rng.random_range(0.0..40.0)).unwrap();
            let got = time_constrained_gallery(
                query,
                &s.graph,
                &gallery_cams,
                galleries,
                &window,
                &GalleryOptions::default(),
            )
            .unwrap();

            let mut want: Vec<(f64, TrajRef)> = Vec::new();
            for cam in &gallery_cams {
                let o = s.graph.overlap(cam, qcam);
                let st_sch = if o > 0.0 { query.start_time - o } else { query.start_time };
                for t in galleries.get(cam).into_iter().flatten() {
                    let d = t.start_time - st_sch;
                    if window.min <= d && d <= window.max {
                        want.push((d, t.traj_ref()));
                    }
                }
            }
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<(f64, TrajRef)> = got.iter().map(|c| (c.time_offset, c.traj_ref())).collect();
            assert_eq!(got, want, "seed {seed}");
        }
    }
}

#[test]
fn zero_overlap_reduces_to_plain_csg() {
    let s = five_camera(0);
    let graph = s.graph.without_overlaps();
    let galleries = &s.ground_truth.trajectories;
    let query = &galleries[&CameraId::new("c001")][0];
    let window = TimeWindow::new(-30.0, 30.0).unwrap();
    let cams: Vec<CameraId> = graph.cameras.iter().skip(1).map(|c| c.camera_id.clone()).collect();
    let got = time_constrained_gallery(query, &graph, &cams, galleries, &window, &GalleryOptions::default()).unwrap();
    let mut want: Vec<TrajRef> = cams
        .iter()
        .flat_map(|c| csg(query.start_time, &galleries[c], &window))
        .map(|h| h.trajectory.traj_ref())
        .collect();
    want.sort();
    let mut got: Vec<TrajRef> = got.iter().map(|c| c.traj_ref()).collect();
    got.sort();
    assert_eq!(got, want);
}

#[test]
fn pruning_never_drops_true_successor() {
    for seed in 0..30 {
        let s = five_camera(seed);
        let galleries = &s.ground_truth.trajectories;
        let window = TimeWindow::new(-30.0, 30.0).unwrap();
        for v in &s.ground_truth.vehicles {
            for pair in v.visits.windows(2) {
                let q = s
                    .ground_truth
                    .trajectory(&TrajRef::new(pair[0].camera_id.as_str(), pair[0].trajectory_id))
                    .unwrap();
                let truth = TrajRef::new(pair[1].camera_id.as_str(), pair[1].trajectory_id);
                let opts = RecommendOptions {
                    window,
                    mode: RankMode::Time,
                    topology: TopologyOptions::default(),
                    gallery: GalleryOptions::default(),
                };
                let ranked = recommend(q, &s.graph, galleries, &opts).unwrap();
                assert!(ranked.iter().any(|c| c.traj_ref() == truth), "seed {seed}: {truth} pruned");

                let cams: Vec<CameraId> = s.graph.cameras.iter().map(|c| c.camera_id.clone()).filter(|c| c != q.camera_id()).collect();
                let before = time_constrained_gallery(q, &s.graph, &cams, galleries, &window, &GalleryOptions::default()).unwrap();
                let n_before = before.len();
                let after = topology_prune(before, q, &s.graph, &TopologyOptions::default());
                assert!(after.len() <= n_before);
            }
        }
    }
}
