use std::collections::BTreeSet;

use mtmc_core::geometry::{cosine_distance, BoundingBox};
use mtmc_core::ids::CameraId;
use mtmc_core::ingest::{key_frames, Detection, KeyFrame, SamplingConfig};
use mtmc_core::scenario::{generate, ScenarioConfig};
use mtmc_core::tracker::{
    aggregate_feature, associate, filter_trajectories, interpolate, AssociationConfig, Trajectory,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn det(frame: u32, id: u32, bbox: BoundingBox, feature: Vec<f32>) -> Detection {
    Detection {
        camera_id: CameraId::new("c"),
        frame,
        bbox,
        confidence: 0.9,
        feature,
        detection_id: id,
    }
}

/// Best matching by exhaustive enumeration: most allowed pairs first, then
/// lowest total cost.
fn brute_force(costs: &[Vec<Option<f64>>], m: usize) -> BTreeSet<(usize, usize)> {
    fn go(
        row: usize,
        costs: &[Vec<Option<f64>>],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        cost: f64,
        best: &mut (usize, f64, Vec<(usize, usize)>),
    ) {
        if row == costs.len() {
            if cur.len() > best.0 || (cur.len() == best.0 && cost < best.1) {
                *best = (cur.len(), cost, cur.clone());
            }
            return;
        }
        go(row + 1, costs, used, cur, cost, best);
        for j in 0..used.len() {
            if let (false, Some(c)) = (used[j], costs[row][j]) {
                used[j] = true;
                cur.push((row, j));
                go(row + 1, costs, used, cur, cost + c, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, f64::INFINITY, Vec::new());
    go(0, costs, &mut vec![false; m], &mut Vec::new(), 0.0, &mut best);
    best.2.into_iter().collect()
}

#[test]
fn association_matches_exhaustive_search() {
    let cfg = AssociationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked_pairs = 0;
    for _ in 0..400 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let boxes = |rng: &mut ChaCha8Rng, k: usize| -> Vec<BoundingBox> {
            (0..k)
                .map(|_| {
                    let x = rng.random_range(0.0..120.0);
                    let y = rng.random_range(0.0..60.0);
                    BoundingBox::new(x, y, x + 60.0, y + 40.0).unwrap()
                })
                .collect()
        };
        let base: Vec<Vec<f32>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let feat = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            let b = &base[rng.random_range(0..base.len())];
            b.iter().map(|x| x + rng.random_range(-0.3f32..0.3)).collect()
        };
        let b0 = boxes(&mut rng, n);
        let b1 = boxes(&mut rng, m);
        let f0: Vec<Vec<f32>> = (0..n).map(|_| feat(&mut rng)).collect();
        let f1: Vec<Vec<f32>> = (0..m).map(|_| feat(&mut rng)).collect();

        let frames = vec![
            KeyFrame {
                frame: 0,
                detections: (0..n).map(|i| det(0, i as u32, b0[i], f0[i].clone())).collect(),
            },
            KeyFrame {
                frame: 1,
                detections: (0..m).map(|j| det(1, j as u32, b1[j], f1[j].clone())).collect(),
            },
        ];
        let trajs = associate(&frames, &cfg, 10.0).unwrap();
        let got: BTreeSet<(usize, usize)> = trajs
            .iter()
            .filter(|t| t.boxes.len() == 2)
            .map(|t| {
                let i = b0.iter().position(|b| b == &t.boxes[&0]).unwrap();
                let j = b1.iter().position(|b| b == &t.boxes[&1]).unwrap();
                (i, j)
            })
            .collect();

        let costs: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let iou = b0[i].iou(&b1[j]);
                        let cos = cosine_distance(&f0[i], &f1[j]);
                        (iou >= cfg.gate_iou && cos <= cfg.gate_cos)
                            .then_some(cfg.lambda * (1.0 - iou) + (1.0 - cfg.lambda) * cos)
                    })
                    .collect()
            })
            .collect();
        let want = brute_force(&costs, m);
        checked_pairs += want.len();
        assert_eq!(got, want, "costs {costs:?}");
    }
    assert!(checked_pairs > 200, "instances too sparse: {checked_pairs}");
}

#[test]
fn stationary_pairs_and_single_birth() {
    let cfg = AssociationConfig { max_age: 1, ..AssociationConfig::default() };
    let a = BoundingBox::new(0.0, 0.0, 50.0, 50.0).unwrap();
    let b = BoundingBox::new(500.0, 500.0, 560.0, 540.0).unwrap();
    let frames: Vec<KeyFrame> = (0..10)
        .map(|f| KeyFrame {
            frame: f,
            detections: vec![det(f, 0, a, vec![1.0, 0.0]), det(f, 1, b, vec![0.0, 1.0])],
        })
        .collect();
    let trajs = associate(&frames, &cfg, 10.0).unwrap();
    assert_eq!(trajs.len(), 2);
    assert!(trajs.iter().all(|t| t.boxes.len() == 10));

    let one = vec![
        KeyFrame { frame: 0, detections: vec![det(0, 0, a, vec![1.0])] },
        KeyFrame { frame: 1, detections: vec![] },
        KeyFrame { frame: 2, detections: vec![] },
    ];
    let trajs = associate(&one, &cfg, 10.0).unwrap();
    assert_eq!(trajs.len(), 1);
    assert_eq!(trajs[0].boxes.len(), 1);
}

fn sparse(boxes: Vec<(u32, BoundingBox)>) -> Trajectory {
    Trajectory {
        trajectory_id: 1,
        camera_id: CameraId::new("c"),
        start_time: 0.0,
        end_time: 0.0,
        boxes: boxes.into_iter().collect(),
        feature: vec![1.0],
        frame_features: vec![vec![1.0]],
        orientation: [0.0, 0.0],
    }
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0.0f64..1000.0, 0.0f64..1000.0, 1.0f64..300.0, 1.0f64..300.0)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn interpolation_endpoints_and_monotone(boxes in prop::collection::vec(arb_box(), 2..8), f in 1u32..12) {
        let t = sparse(boxes.iter().enumerate().map(|(k, b)| (k as u32 * f, *b)).collect());
        let d = interpolate(&t, f).unwrap();
        prop_assert_eq!(d.boxes.len() as u32, (boxes.len() as u32 - 1) * f + 1);
        for (k, b) in boxes.iter().enumerate() {
            prop_assert_eq!(d.boxes[&(k as u32 * f)], *b);
        }
        for (k, w) in boxes.windows(2).enumerate() {
            let (lo, hi) = (w[0].as_array(), w[1].as_array());
            for j in k as u32 * f..=(k as u32 + 1) * f {
                let c = d.boxes[&j].as_array();
                for q in 0..4 {
                    prop_assert!(c[q] >= lo[q].min(hi[q]) - 1e-9 && c[q] <= lo[q].max(hi[q]) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn interval_one_is_identity(boxes in prop::collection::vec(arb_box(), 1..10)) {
        let t = sparse(boxes.iter().enumerate().map(|(k, b)| (k as u32, *b)).collect());
        prop_assert_eq!(interpolate(&t, 1).unwrap(), t);
    }

    #[test]
    fn mean_permutation_and_translation(
        rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 6), 1..30),
        shift in prop::collection::vec(-5.0f32..5.0, 6),
        seed in any::<u64>(),
    ) {
        let mean = aggregate_feature(&rows).unwrap();
        let mut shuffled = rows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let m2 = aggregate_feature(&shuffled).unwrap();
        for (a, b) in mean.iter().zip(&m2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let moved: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
        let m3 = aggregate_feature(&moved).unwrap();
        for ((a, b), s) in mean.iter().zip(&m3).zip(&shift) {
            // the shifted rows are rounded to f32 before averaging
            prop_assert!((a + *s as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn filter_is_idempotent_subsequence(lens in prop::collection::vec((1u32..40, 0.0f64..200.0), 0..12)) {
        let trajs: Vec<Trajectory> = lens
            .iter()
            .enumerate()
            .map(|(k, &(n, dx))| {
                let mut t = sparse((0..n).map(|f| {
                    let x = dx * f as f64 / n as f64;
                    (f, BoundingBox::new(x, 0.0, x + 50.0, 30.0).unwrap())
                }).collect());
                t.trajectory_id = k as u64;
                t.end_time = (n - 1) as f64 / 10.0;
                t
            })
            .collect();
        let cfg = AssociationConfig::default();
        let once = filter_trajectories(&trajs, &cfg);
        prop_assert_eq!(&filter_trajectories(&once, &cfg), &once);
        let ids: Vec<u64> = once.iter().map(|t| t.trajectory_id).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        prop_assert_eq!(ids, sorted);
    }
}

#[test]
fn interpolation_closed_form_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let f = [2u32, 5, 10][rng.random_range(0..3)];
        let mut corner = || {
            let x = rng.random_range(-500.0..1500.0);
            let y = rng.random_range(-500.0..1500.0);
            BoundingBox::new(x, y, x + rng.random_range(0.0..400.0), y + rng.random_range(0.0..400.0)).unwrap()
        };
        let (b0, b1) = (corner(), corner());
        let i = rng.random_range(0..100u32) * f;
        let d = interpolate(&sparse(vec![(i, b0), (i + f, b1)]), f).unwrap();
        let (p, q) = (b0.as_array(), b1.as_array());
        for j in i..=i + f {
            let s = (j - i) as f64 / f as f64;
            let got = d.boxes[&j].as_array();
            for c in 0..4 {
                assert!((got[c] - (p[c] + s * (q[c] - p[c]))).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn mean_matches_summation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f32>> = (0..100).map(|_| (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
    let mean = aggregate_feature(&rows).unwrap();
    for c in 0..16 {
        let mut s = 0.0f64;
        for r in &rows {
            s += r[c] as f64;
        }
        assert!((mean[c] - s / 100.0).abs() < 1e-9);
    }
}

#[test]
fn noiseless_detections_partitioned_like_ground_truth() {
    let s = generate(&ScenarioConfig { n_vehicles: 10, seed: 21, ..ScenarioConfig::default() }).unwrap();
    let cfg = AssociationConfig::default();
    for (cam, dets) in &s.detections {
        let frames = key_frames(dets, 1, s.metas[cam].frame_count);
        let trajs = associate(&frames, &cfg, SamplingConfig::default().fps).unwrap();
        let truth = &s.ground_truth.trajectories[cam];
        let as_sets = |ts: &[Trajectory]| -> BTreeSet<Vec<(u32, [u64; 4])>> {
            ts.iter()
                .map(|t| t.boxes.iter().map(|(f, b)| (*f, b.as_array().map(f64::to_bits))).collect())
                .collect()
        };
        assert_eq!(as_sets(&trajs), as_sets(truth), "camera {cam}");
    }
}
