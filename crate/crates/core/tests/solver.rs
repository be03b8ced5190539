use bpnp::geometry::{log_rotation, objective};
use bpnp::pnp::inliers;
use bpnp::tasks::synthetic::{generate_synthetic, SceneSpec};
use bpnp::{
    constraint_f, ransac_init, solve_pnp, Correspondences, Error, Intrinsics, PnPSolution, Pose, RansacConfig,
    SolverConfig,
};
use nalgebra::{Vector2, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    corrs: Correspondences,
    k: Intrinsics,
    truth: Pose,
}

fn instance(n: usize, noise: f64, seed: u64) -> Instance {
    let spec = SceneSpec {
        n,
        noise_sigma: noise,
        seed,
        ..SceneSpec::default()
    };
    let scene = generate_synthetic(&spec).unwrap();
    Instance {
        corrs: scene.correspondences(0).unwrap(),
        k: scene.intrinsics,
        truth: scene.poses[0],
    }
}

fn solve_from_ransac(inst: &Instance, seed: u64) -> PnPSolution {
    let ransac = RansacConfig {
        seed,
        ..RansacConfig::default()
    };
    let init = ransac_init(&inst.corrs, &inst.k, &ransac).unwrap();
    solve_pnp(&inst.corrs, &inst.k, &init, &SolverConfig::default()).unwrap()
}

fn non_increasing(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0])
}

fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
    let rel = a.rotation_matrix().transpose() * b.rotation_matrix();
    log_rotation(&rel).unwrap().norm().to_degrees()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn noise_free_instances_are_recovered_from_ransac() {
    for n in [4, 8, 20, 100] {
        for seed in 0..100 {
            let inst = instance(n, 0.0, seed);
            let sol = solve_from_ransac(&inst, seed);
            assert!(
                sol.objective <= 1e-8,
                "n={n} seed={seed}: objective {:e}",
                sol.objective
            );
            assert!(non_increasing(&sol.history), "n={n} seed={seed}");
        }
    }
}

#[test]
fn perturbed_start_recovers_the_true_pose() {
    for seed in 0..20 {
        let inst = instance(8, 0.0, seed);
        let init = Pose::from_vector(&(inst.truth.to_vector() + Vector6::repeat(0.05)));
        let sol = solve_pnp(&inst.corrs, &inst.k, &init, &SolverConfig::default()).unwrap();
        assert!(sol.objective <= 1e-10, "seed {seed}: {:e}", sol.objective);
        assert!(
            (sol.pose.to_vector() - inst.truth.to_vector()).amax() <= 1e-6,
            "seed {seed}"
        );
    }
}

#[test]
fn objective_matches_recomputation_and_f_is_stationary() {
    let cfg = SolverConfig::default();
    for seed in 0..30 {
        let inst = instance(12, 1.0, seed);
        let sol = solve_from_ransac(&inst, seed);
        let recomputed = objective(&inst.corrs.image, &inst.corrs.world, &sol.pose, &inst.k).unwrap();
        assert!(
            (sol.objective - recomputed).abs() <= 1e-12 * recomputed.max(1.0),
            "seed {seed}"
        );
        let f = constraint_f(&inst.corrs.image, &sol.pose, &inst.corrs.world, &inst.k).unwrap();
        assert!(sol.converged && sol.stationarity_norm <= cfg.grad_tol, "seed {seed}");
        assert!(f.amax() <= cfg.grad_tol, "seed {seed}: |f| = {:e}", f.amax());
    }
}

#[test]
fn solving_from_a_minimum_stays_put() {
    let cfg = SolverConfig::default();
    for seed in 0..10 {
        let inst = instance(8, 0.5, seed);
        let first = solve_from_ransac(&inst, seed);
        let again = solve_pnp(&inst.corrs, &inst.k, &first.pose, &cfg).unwrap();
        assert!(again.iterations <= 2, "seed {seed}: {} iterations", again.iterations);
        assert!(
            (again.pose.to_vector() - first.pose.to_vector()).amax() <= cfg.step_tol,
            "seed {seed}"
        );
    }
}

#[test]
fn pose_is_robust_to_unit_pixel_noise() {
    let (mut rot, mut trans) = (Vec::new(), Vec::new());
    for seed in 0..50 {
        let inst = instance(20, 1.0, 1000 + seed);
        let sol = solve_from_ransac(&inst, seed);
        rot.push(rotation_error_deg(&sol.pose, &inst.truth));
        trans.push((sol.pose.trans - inst.truth.trans).norm() / inst.truth.trans.z);
    }
    let (r, t) = (median(rot), median(trans));
    assert!(r <= 2.0, "median rotation error {r} deg");
    assert!(t <= 0.02, "median translation error {t} of depth");
}

#[test]
fn ransac_separates_uniform_outliers() {
    let n = 20;
    for trial in 0..20 {
        let mut inst = instance(n, 0.0, 500 + trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let corrupted: Vec<usize> = rand::seq::index::sample(&mut rng, n, n / 4).into_vec();
        for &i in &corrupted {
            inst.corrs.image[i] = Vector2::new(rng.random_range(0.0..800.0), rng.random_range(0.0..600.0));
        }
        let ransac = RansacConfig {
            seed: trial,
            ..RansacConfig::default()
        };
        let pose = ransac_init(&inst.corrs, &inst.k, &ransac).unwrap();
        let found = inliers(&inst.corrs, &inst.k, &pose, ransac.inlier_threshold);
        let expected: Vec<usize> = (0..n).filter(|i| !corrupted.contains(i)).collect();
        assert_eq!(found, expected, "trial {trial}");
    }
}

#[test]
fn ransac_and_solver_are_deterministic() {
    let inst = instance(30, 1.0, 7);
    let ransac = RansacConfig {
        seed: 3,
        ..RansacConfig::default()
    };
    let a = ransac_init(&inst.corrs, &inst.k, &ransac).unwrap();
    let b = ransac_init(&inst.corrs, &inst.k, &ransac).unwrap();
    assert_eq!(a.to_vector().map(f64::to_bits), b.to_vector().map(f64::to_bits));
    let cfg = SolverConfig::default();
    assert_eq!(
        solve_pnp(&inst.corrs, &inst.k, &a, &cfg).unwrap(),
        solve_pnp(&inst.corrs, &inst.k, &b, &cfg).unwrap()
    );
}

#[test]
fn three_points_are_rejected() {
    let inst = instance(4, 0.0, 0);
    let image = inst.corrs.image[..3].to_vec();
    let world = inst.corrs.world[..3].to_vec();
    assert!(matches!(
        Correspondences::new(image, world),
        Err(Error::TooFewPoints { required: 4, actual: 3 })
    ));
}

#[test]
fn iteration_budget_exhaustion_returns_the_best_pose() {
    let inst = instance(8, 0.5, 2);
    let cfg = SolverConfig {
        max_iters: 1,
        ..SolverConfig::default()
    };
    let init = Pose::from_vector(&(inst.truth.to_vector() + Vector6::repeat(0.1)));
    let start = objective(&inst.corrs.image, &inst.corrs.world, &init, &inst.k).unwrap();
    match solve_pnp(&inst.corrs, &inst.k, &init, &cfg) {
        Err(Error::DidNotConverge(sol)) => {
            assert!(!sol.converged);
            assert!(sol.objective <= start * (1.0 + 1e-12), "{} > {start}", sol.objective);
        }
        other => panic!("expected DidNotConverge, got {other:?}"),
    }
}

#[test]
fn invalid_solver_settings_are_rejected() {
    let inst = instance(8, 0.0, 0);
    let bad = [
        SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        },
        SolverConfig {
            grad_tol: 0.0,
            ..SolverConfig::default()
        },
        SolverConfig {
            lambda_up: 1.0,
            ..SolverConfig::default()
        },
        SolverConfig {
            lambda_down: 1.0,
            ..SolverConfig::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(
            solve_pnp(&inst.corrs, &inst.k, &inst.truth, &cfg),
            Err(Error::InvalidInput(_))
        ));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accepted_steps_never_increase_the_objective(
        seed in 0u64..1000,
        n in 4usize..30,
        noise in 0.0..3.0f64,
        offset in prop::array::uniform6(-0.2..0.2f64),
    ) {
        let inst = instance(n, noise, seed);
        let init = Pose::from_vector(&(inst.truth.to_vector() + Vector6::from(offset)));
        let sol = match solve_pnp(&inst.corrs, &inst.k, &init, &SolverConfig::default()) {
            Ok(sol) => sol,
            Err(Error::DidNotConverge(sol)) => *sol,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(non_increasing(&sol.history), "{:?}", sol.history);
        if sol.converged {
            prop_assert!(sol.stationarity_norm <= 1e-8);
        }
    }
}
