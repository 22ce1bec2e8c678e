use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simsync::eval::{align_gauge, compute_metrics, GaugeMode};
use simsync::geometry::{exp_so3, random_rotation};
use simsync::graph::{graph_to_json, parse_graph, ReadOptions};
use simsync::registration::{arun_covariance, weighted_arun, weighted_cost, weighted_umeyama};
use simsync::simulate::{gen_trajectory, observe, visibility, world_points, Dataset, SimConfig};
use simsync::{Correspondence, Edge, Execution, Frame, SimilarityTransform, ViewGraph};

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect()
}

fn similarity(rng: &mut ChaCha8Rng) -> SimilarityTransform {
    SimilarityTransform {
        scale: rng.random_range(0.2..5.0),
        rotation: random_rotation(rng),
        translation: Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn umeyama_inverts_a_similarity(seed in any::<u64>(), n in 3usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = similarity(&mut rng);
        let x = cloud(&mut rng, n);
        let y: Vec<_> = x.iter().map(|p| t.apply(p)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let got = weighted_umeyama(&x, &y, &w).unwrap().transform;
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((got.apply(a) - b).norm() <= 1e-10 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn uniform_weights_match_unweighted(seed in any::<u64>(), n in 4usize..30, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = cloud(&mut rng, n);
        let y = cloud(&mut rng, n);
        let a = weighted_umeyama(&x, &y, &vec![1.0; n]).unwrap().transform;
        let b = weighted_umeyama(&x, &y, &vec![c; n]).unwrap().transform;
        prop_assert!((a.scale - b.scale).abs() < 1e-10);
        prop_assert!((a.rotation - b.rotation).norm() < 1e-9);
        prop_assert!((a.translation - b.translation).norm() < 1e-9);
    }

    #[test]
    fn umeyama_beats_random_candidates(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = cloud(&mut rng, 4);
        let y = cloud(&mut rng, 4);
        let w = vec![1.0; 4];
        let best = weighted_cost(&x, &y, &w, &weighted_umeyama(&x, &y, &w).unwrap().transform);
        for _ in 0..2000 {
            let c = weighted_cost(&x, &y, &w, &similarity(&mut rng));
            prop_assert!(best <= c + 1e-12);
        }
    }

    #[test]
    fn rigid_fit_is_scale_free(seed in any::<u64>(), n in 3usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = SimilarityTransform { scale: 1.0, ..similarity(&mut rng) };
        let x = cloud(&mut rng, n);
        let y: Vec<_> = x.iter().map(|p| t.apply(p)).collect();
        let got = weighted_arun(&x, &y, &vec![1.0; n]).unwrap().transform;
        prop_assert_eq!(got.scale, 1.0);
        prop_assert!((got.rotation - t.rotation).norm() < 1e-9);
    }

    #[test]
    fn covariance_is_symmetric_psd_and_order_free(seed in any::<u64>(), n in 4usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_rotation(&mut rng);
        let pj = cloud(&mut rng, n);
        let pi: Vec<_> = pj.iter().map(|p| r * p).collect();
        let c = arun_covariance(&pi, &pj, &r, 0.01, None).unwrap();
        prop_assert!((c - c.transpose()).norm() <= 1e-15 * c.norm());
        prop_assert!(c.symmetric_eigenvalues().min() >= -1e-12 * c.norm());
        let (mut qi, mut qj) = (pi.clone(), pj.clone());
        qi.reverse();
        qj.reverse();
        let d = arun_covariance(&qi, &qj, &r, 0.01, None).unwrap();
        prop_assert!((c - d).norm() <= 1e-9 * c.norm());
    }

    #[test]
    fn anchored_metrics_ignore_a_global_similarity(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: Vec<_> = (0..n).map(|_| similarity(&mut rng)).collect();
        let est: Vec<_> = gt
            .iter()
            .map(|t| {
                let w = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
                SimilarityTransform { rotation: t.rotation * exp_so3(&w), ..*t }
            })
            .collect();
        let g = similarity(&mut rng);
        let moved: Vec<_> = est.iter().map(|t| g.compose(t)).collect();
        let (a, b) = align_gauge(&est, &gt, GaugeMode::Anchor).unwrap();
        let (c, d) = align_gauge(&moved, &gt, GaugeMode::Anchor).unwrap();
        let m1 = compute_metrics(&a, &b);
        let m2 = compute_metrics(&c, &d);
        prop_assert!((m1.rot_err_deg - m2.rot_err_deg).abs() < 1e-8);
        prop_assert!((m1.trans_err - m2.trans_err).abs() < 1e-8 * (1.0 + m1.trans_err));
        prop_assert!((m1.scale_err - m2.scale_err).abs() < 1e-9);
    }

    #[test]
    fn visibility_grows_with_fov(seed in 0u64..500, lo in 10.0f64..180.0, extra in 0.0f64..180.0) {
        let cfg = SimConfig::new(Dataset::Line, 3, 200, 0.0, seed);
        let poses = gen_trajectory(&cfg).unwrap();
        let world = world_points(200, seed);
        for pose in &poses {
            let narrow = visibility(pose, &world, lo);
            let wide = visibility(pose, &world, (lo + extra).min(360.0));
            prop_assert!(narrow.iter().zip(&wide).all(|(&a, &b)| !a || b));
        }
    }

    #[test]
    fn graph_json_round_trips(seed in any::<u64>(), n_frames in 2usize..6, n_points in 3usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Frame> = (0..n_frames)
            .map(|k| {
                let pts = cloud(&mut rng, n_points).into_iter().map(|p| p + Vector3::new(0.0, 0.0, 5.0)).collect();
                Frame::new(format!("f{k}"), pts)
            })
            .collect();
        let edges: Vec<Edge> = (1..n_frames)
            .map(|j| {
                let matches = (0..n_points)
                    .map(|k| Correspondence::new(k, (k + j) % n_points, rng.random_range(0.0..3.0)))
                    .collect();
                Edge::new(j - 1, j, matches)
            })
            .collect();
        let g = ViewGraph::new(frames, edges);
        let text = graph_to_json(&g, None).unwrap();
        prop_assert_eq!(parse_graph(&text, ReadOptions::default()).unwrap(), g);
    }
}

#[test]
fn per_coordinate_noise_has_the_requested_spread() {
    let cfg = SimConfig::new(Dataset::Circle, 2, 1000, 0.01, 3);
    let poses = gen_trajectory(&cfg).unwrap();
    let world = world_points(1000, 3);
    let clean = observe(&poses, &world, 0.0, 3, Execution::Sequential);
    let noisy = observe(&poses, &world, 0.01, 3, Execution::Sequential);
    let diffs: Vec<f64> = clean
        .iter()
        .zip(&noisy)
        .flat_map(|(a, b)| a.iter().zip(b).flat_map(|(p, q)| (q - p).iter().copied().collect::<Vec<_>>()))
        .collect();
    let var = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
    assert!((var.sqrt() / 0.01 - 1.0).abs() < 0.05, "std {}", var.sqrt());
}
