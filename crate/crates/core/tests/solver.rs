use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simsync::assembly::{assemble, stack_scaled_rotations};
use simsync::geometry::random_rotation;
use simsync::ipm::{ConicProgram, ConicSolver, Constraint, InteriorPoint, SolveStatus, SparseSym};
use simsync::sdp::{build_sdp, solve_graph, SyncOptions};
use simsync::simulate::{simulate, Dataset, SimConfig};
use simsync::SimilarityTransform;

fn trace_program(c: DMatrix<f64>) -> ConicProgram {
    let n = c.nrows();
    let mut a = SparseSym::new();
    for k in 0..n {
        a.push(k, k, 1.0);
    }
    ConicProgram {
        block_sizes: vec![n],
        cost: vec![c],
        constraints: vec![Constraint::single(0, a)],
        b: DVector::from_element(1, 1.0),
    }
}

fn symmetric(n: usize, vals: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |r, c| vals[(r * n + c) % vals.len()]);
    (&m + m.transpose()) * 0.5
}

/// `min ⟨C, X⟩` over two diagonal blocks with `X₀₀ + X₁₁ = 1`: the optimum picks the cheaper block.
#[test]
fn two_block_lp_in_sdp_form() {
    let mut a0 = SparseSym::new();
    a0.push(0, 0, 1.0);
    let mut a1 = SparseSym::new();
    a1.push(0, 0, 1.0);
    let p = ConicProgram {
        block_sizes: vec![1, 1],
        cost: vec![DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, -2.0)],
        constraints: vec![Constraint {
            parts: vec![(0, a0), (1, a1)],
        }],
        b: DVector::from_element(1, 1.0),
    };
    let sol = InteriorPoint::default().solve(&p).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal_objective + 2.0).abs() < 1e-8);
    assert!(sol.relative_gap <= 1e-9);
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let inst = simulate(&SimConfig::new(Dataset::Line, 6, 60, 0.05, 4)).unwrap();
    let a = solve_graph(&inst.graph, &SyncOptions::default()).unwrap();
    let b = solve_graph(&inst.graph, &SyncOptions::default()).unwrap();
    assert_eq!(a.to_json().to_string(), b.to_json().to_string());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_program_finds_min_eigenvalue(n in 2usize..6, vals in prop::collection::vec(-5.0f64..5.0, 36)) {
        let c = symmetric(n, &vals);
        let sol = InteriorPoint::default().solve(&trace_program(c.clone())).unwrap();
        let lmin = c.symmetric_eigenvalues().min();
        prop_assert!((sol.primal_objective - lmin).abs() <= 1e-7 * (1.0 + lmin.abs()));
        // Weak duality at the returned pair.
        prop_assert!(sol.dual_objective <= sol.primal_objective + 1e-8 * (1.0 + lmin.abs()));
    }

    #[test]
    fn sdp_value_bounds_every_feasible_point(seed in 0u64..1000, n in 3usize..6, sigma in 0.0f64..0.3) {
        let inst = simulate(&SimConfig::new(Dataset::Circle, n, 60, sigma, seed).with_scales(0.9, 1.1)).unwrap();
        let m = assemble(&inst.graph).unwrap();
        let sol = solve_graph(&inst.graph, &SyncOptions { refine: false, ..SyncOptions::default() }).unwrap();
        prop_assert!(sol.f_star <= sol.rho_hat + 1e-9 * (1.0 + sol.rho_hat.abs()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let frames: Vec<SimilarityTransform> = (0..n)
                .map(|k| SimilarityTransform {
                    scale: if k == 0 { 1.0 } else { 0.5 + rand::Rng::random::<f64>(&mut rng) },
                    rotation: if k == 0 { nalgebra::Matrix3::identity() } else { random_rotation(&mut rng) },
                    translation: nalgebra::Vector3::zeros(),
                })
                .collect();
            let r = stack_scaled_rotations(&frames);
            let cost = (&r * &m.q * r.transpose()).trace();
            prop_assert!(sol.f_star <= cost + 1e-9 * (1.0 + cost.abs()));
        }
    }

    #[test]
    fn noise_free_problems_are_certified_exact(seed in 0u64..1000, n in 2usize..6) {
        let inst = simulate(&SimConfig::new(Dataset::Circle, n, 80, 0.0, seed).with_scales(0.9, 1.1)).unwrap();
        let sol = solve_graph(&inst.graph, &SyncOptions::default()).unwrap();
        prop_assert!(sol.certified && sol.exact, "eta {}", sol.eta);
        for (e, g) in sol.transforms.iter().zip(&inst.truth.transforms) {
            prop_assert!((e.scale / g.scale - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn constraint_count_follows_frame_count() {
    for n in 1..=12 {
        let q = DMatrix::<f64>::identity(3 * n, 3 * n);
        assert_eq!(build_sdp(&q, true).unwrap().n_constraints(), 5 * (n - 1) + 6);
    }
}
