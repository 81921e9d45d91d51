use nalgebra::{DMatrix, Vector2, Vector3};
use proptest::prelude::*;

use riseg_core::action::elbow;
use riseg_core::clustering::{markov_cluster, ClusterConfig, SimilarityGraph};
use riseg_core::flow::{DepthMap, FlowField};
use riseg_core::geometry::{rotation_about, spatial_twist, Pose};
use riseg_core::grid::Grid;
use riseg_core::io;
use riseg_core::metrics::{evaluate, hungarian};
use riseg_core::segmenter::{propagate_mask, LabelMask};

fn label_mask(w: usize, h: usize) -> impl Strategy<Value = LabelMask> {
    prop::collection::vec(
        prop_oneof![3 => Just(0u32), 1 => 1u32..5, 1 => 7u32..9],
        w * h,
    )
    .prop_map(move |v| LabelMask::from_grid(Grid::from_fn(w, h, |u, y| v[y * w + u])))
}

fn pose() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        -3.0f64..3.0,
        prop::array::uniform3(-1.0f64..1.0),
    )
        .prop_filter("axis must be non-zero", |(a, _, _)| {
            Vector3::from(*a).norm() > 1e-3
        })
        .prop_map(|(a, angle, t)| {
            Pose::new(
                rotation_about(&Vector3::from(a).normalize(), angle),
                Vector3::from(t),
            )
        })
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_unit_interval(pred in label_mask(12, 9), gt in label_mask(12, 9)) {
        let e = evaluate(&pred, &gt).unwrap();
        for x in [e.overlap.precision, e.overlap.recall, e.overlap.f_measure,
                  e.boundary.precision, e.boundary.recall, e.boundary.f_measure, e.correct_rate] {
            prop_assert!(in_unit(x));
        }
    }

    #[test]
    fn metrics_ignore_prediction_ids(pred in label_mask(10, 8), gt in label_mask(10, 8), shift in 1u32..100) {
        let renamed = LabelMask::from_grid(pred.labels.map(|&l| if l > 0 { l + shift } else { 0 }));
        let a = evaluate(&pred, &gt).unwrap();
        let b = evaluate(&renamed, &gt).unwrap();
        prop_assert!((a.overlap.f_measure - b.overlap.f_measure).abs() < 1e-12);
        prop_assert!((a.boundary.f_measure - b.boundary.f_measure).abs() < 1e-12);
        prop_assert!((a.correct_rate - b.correct_rate).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_scores_one(gt in label_mask(10, 8)) {
        let e = evaluate(&gt, &gt).unwrap();
        prop_assert_eq!(e.overlap.f_measure, 1.0);
        prop_assert_eq!(e.boundary.f_measure, 1.0);
        prop_assert_eq!(e.correct_rate, 1.0);
    }

    #[test]
    fn binarize_is_idempotent(m in label_mask(9, 7)) {
        let once = m.binarize();
        let again = LabelMask::from_grid(once.map(|&b| b as u32)).binarize();
        prop_assert_eq!(once, again);
    }

    #[test]
    fn propagation_never_adds_pixels(
        m in label_mask(10, 8),
        flow in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 80),
    ) {
        let f = FlowField::from_vectors(Grid::from_fn(10, 8, |u, v| {
            let (a, b) = flow[v * 10 + u];
            [a, b]
        }));
        let out = propagate_mask(&m, &f).unwrap();
        prop_assert!(out.labeled_count() <= m.labeled_count());
        prop_assert!(out.ids().is_subset(&m.ids()));
    }

    #[test]
    fn zero_flow_propagation_is_identity(m in label_mask(9, 6)) {
        prop_assert_eq!(propagate_mask(&m, &FlowField::zeros(9, 6)).unwrap(), m);
    }

    #[test]
    fn markov_clusters_partition_nodes(
        n in 1usize..14,
        raw in prop::collection::vec(0.0f64..1.0, 14 * 14),
        sparsity in 0.0f64..0.9,
    ) {
        let mut w = DMatrix::from_fn(n, n, |i, j| {
            let x = raw[i.min(j) * 14 + i.max(j)];
            if x < sparsity { 0.0 } else { x }
        });
        for i in 0..n {
            w[(i, i)] = 1.0;
        }
        let out = markov_cluster(&SimilarityGraph { weights: w }, &ClusterConfig::default());
        let mut seen = vec![0usize; n];
        for c in &out.clusters {
            prop_assert!(!c.is_empty());
            for &i in c {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn finite_difference_twist_is_frame_invariant(a in pose(), b in pose(), motion in pose()) {
        let ta = spatial_twist(&a, &motion.compose(&a), 1.0).unwrap();
        let tb = spatial_twist(&b, &motion.compose(&b), 1.0).unwrap();
        prop_assert!((ta.to_vector() - tb.to_vector()).norm() < 1e-9);
    }

    #[test]
    fn pose_inverse_round_trip(p in pose(), x in prop::array::uniform3(-2.0f64..2.0)) {
        let x = Vector3::from(x);
        let back = p.inverse().transform_point(&p.transform_point(&x));
        prop_assert!((back - x).norm() < 1e-12);
        prop_assert!(p.compose(&p.inverse()).is_valid(1e-9));
    }

    #[test]
    fn hungarian_matches_brute_force(raw in prop::collection::vec(0.0f64..10.0, 16), n in 1usize..4, extra in 0usize..2) {
        let m = n + extra;
        let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| raw[i * 4 + j]).collect()).collect();
        let got = hungarian(&cost);
        let total: f64 = got.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        fn best(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
            if i == cost.len() {
                return 0.0;
            }
            let mut b = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    b = b.min(cost[i][j] + best(cost, i + 1, used));
                    used[j] = false;
                }
            }
            b
        }
        let mut distinct = got.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(distinct.len(), n);
        prop_assert!((total - best(&cost, 0, &mut vec![false; m])).abs() < 1e-9);
    }

    #[test]
    fn elbow_stays_in_range(mut wcss in prop::collection::vec(0.0f64..100.0, 1..9), ratio in 0.01f64..0.99) {
        wcss.sort_by(|a, b| b.total_cmp(a));
        let k = elbow(&wcss, ratio);
        prop_assert!(k >= 1 && k <= wcss.len());
    }

    #[test]
    fn flo_round_trip(vals in prop::collection::vec(prop::option::weighted(0.9, (-50.0f32..50.0, -50.0f32..50.0)), 30)) {
        let mut f = FlowField::zeros(6, 5);
        for (i, v) in vals.iter().enumerate() {
            f.set(i % 6, i / 6, v.map(|(a, b)| [a as f64, b as f64]));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        io::write_flo(&path, &f).unwrap();
        prop_assert_eq!(io::read_flo(&path).unwrap(), f);
    }

    #[test]
    fn pfm_and_pgm_round_trip(depths in prop::collection::vec(0.1f32..3.0, 20), m in label_mask(5, 4)) {
        let d = DepthMap::from_values(Grid::from_fn(5, 4, |u, v| depths[v * 5 + u] as f64));
        let dir = tempfile::tempdir().unwrap();
        io::write_pfm(&dir.path().join("d.pfm"), &d).unwrap();
        io::write_pgm16(&dir.path().join("m.pgm"), &m).unwrap();
        prop_assert_eq!(io::read_pfm(&dir.path().join("d.pfm")).unwrap(), d);
        prop_assert_eq!(io::read_pgm16(&dir.path().join("m.pgm")).unwrap(), m);
    }
}

#[test]
fn planar_rotation_keeps_polygon_area() {
    use riseg_core::simulator::{polygon_area, Planar};
    let tri = [
        Vector2::new(0.0, 0.0),
        Vector2::new(0.1, 0.0),
        Vector2::new(0.0, 0.05),
    ];
    let p = Planar::new(0.7, Vector2::new(0.3, -0.2));
    let moved: Vec<_> = tri.iter().map(|q| p.apply(q)).collect();
    assert!((polygon_area(&moved) - polygon_area(&tri)).abs() < 1e-15);
}
