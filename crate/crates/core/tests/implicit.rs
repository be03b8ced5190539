use bpnp::geometry::{objective, project, project_with_pose_jacobian, unflatten2};
use bpnp::implicit::{fd_jacobian_oracle, max_relative_error, solution_jacobians, InputKind};
use bpnp::tasks::synthetic::{generate_synthetic, SceneSpec};
use bpnp::{
    backward, constraint_f, constraint_jacobians, implicit_jacobians, ransac_init, solve_pnp, Correspondences, Error,
    Intrinsics, PnPSolution, Pose, RansacConfig, SolverConfig,
};
use nalgebra::{DMatrix, DVector, Vector2, Vector3, Vector6};

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

fn solve(inst: &Instance, seed: u64) -> PnPSolution {
    let init = ransac_init(
        &inst.corrs,
        &inst.k,
        &RansacConfig {
            seed,
            ..RansacConfig::default()
        },
    )
    .unwrap();
    solve_pnp(&inst.corrs, &inst.k, &init, &SolverConfig::default()).unwrap()
}

fn twice<T: Copy>(v: &[T]) -> Vec<T> {
    v.iter().chain(v).copied().collect()
}

fn to_dmatrix(m: &nalgebra::Matrix6xX<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(6, m.ncols(), m.as_slice())
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_relative_error(a, b)
}

/// Central-difference Jacobian (6 x `dim`) of `eval(i, delta)`, which
/// evaluates `f` with input coordinate `i` shifted by `delta`.
fn fd_f_wrt<F>(dim: usize, h: f64, eval: F) -> DMatrix<f64>
where
    F: Fn(usize, f64) -> Vector6<f64>,
{
    let mut m = DMatrix::zeros(6, dim);
    for i in 0..dim {
        m.set_column(i, &((eval(i, h) - eval(i, -h)) / (2.0 * h)));
    }
    m
}

#[test]
fn f_is_the_gradient_of_the_objective() {
    for seed in 0..10 {
        let inst = instance(8, 3.0, seed);
        let pose = Pose::from_vector(&(inst.truth.to_vector() + Vector6::repeat(0.01)));
        let (x, z, k) = (&inst.corrs.image, &inst.corrs.world, &inst.k);
        let f = constraint_f(x, &pose, z, k).unwrap();
        let h = 1e-6;
        let y = pose.to_vector();
        let fd = Vector6::from_fn(|j, _| {
            let at = |d: f64| {
                let mut v = y;
                v[j] += d;
                objective(x, z, &Pose::from_vector(&v), k).unwrap()
            };
            (at(h) - at(-h)) / (2.0 * h)
        });
        let err = (f - fd).amax() / fd.amax();
        assert!(err <= 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn constraint_jacobians_match_differences_of_f() {
    for seed in 0..10 {
        let inst = instance(6, 3.0, seed);
        let pose = Pose::from_vector(&(inst.truth.to_vector() + Vector6::repeat(0.01)));
        let (x, z, k) = (&inst.corrs.image, &inst.corrs.world, &inst.k);
        let jac = constraint_jacobians(x, &pose, z, k).unwrap();
        let h = 1e-6;

        let y = pose.to_vector();
        let df_dy = fd_f_wrt(6, h, |j, d| {
            let mut v = y;
            v[j] += d;
            constraint_f(x, &Pose::from_vector(&v), z, k).unwrap()
        });
        let df_dx = fd_f_wrt(2 * x.len(), h, |i, d| {
            let mut xx = x.clone();
            xx[i / 2][i % 2] += d;
            constraint_f(&xx, &pose, z, k).unwrap()
        });
        let df_dz = fd_f_wrt(3 * z.len(), h, |i, d| {
            let mut zz = z.clone();
            zz[i / 3][i % 3] += d;
            constraint_f(x, &pose, &zz, k).unwrap()
        });
        let df_dk = fd_f_wrt(4, h, |c, d| {
            let mut a = k.to_array();
            a[c] += d;
            constraint_f(x, &pose, z, &Intrinsics::from_array(a)).unwrap()
        });

        let exact_dy = DMatrix::from_column_slice(6, 6, jac.df_dy.as_slice());
        assert!(relative(&exact_dy, &df_dy) <= 1e-4, "seed {seed}: df_dy");
        assert!(relative(&to_dmatrix(&jac.df_dx), &df_dx) <= 1e-4, "seed {seed}: df_dx");
        assert!(relative(&to_dmatrix(&jac.df_dz), &df_dz) <= 1e-4, "seed {seed}: df_dz");
        assert!(relative(&to_dmatrix(&jac.df_dk), &df_dk) <= 1e-4, "seed {seed}: df_dk");
        let asym = (jac.df_dy - jac.df_dy.transpose()).amax();
        assert!(asym <= 1e-8 * jac.df_dy.amax(), "seed {seed}: asymmetry {asym:e}");
        assert!(jac
            .df_dx
            .iter()
            .chain(jac.df_dz.iter())
            .chain(jac.df_dk.iter())
            .all(|v| v.is_finite()));
    }
}

#[test]
fn hessian_is_gauss_newton_at_zero_residual() {
    for seed in 0..10 {
        let inst = instance(8, 0.0, seed);
        let (x, z, k) = (&inst.corrs.image, &inst.corrs.world, &inst.k);
        let jac = constraint_jacobians(x, &inst.truth, z, k).unwrap();
        let (_, j) = project_with_pose_jacobian(z, &inst.truth, k).unwrap();
        let gn = j.tr_mul(&j) * 2.0;
        let hess = DMatrix::from_column_slice(6, 6, jac.df_dy.as_slice());
        assert!(relative(&hess, &gn) <= 1e-10, "seed {seed}");
    }
}

#[test]
fn implicit_jacobians_match_re_solving() {
    let cfg = SolverConfig::default();
    for (i, (n, noise)) in [(8, 0.0), (8, 0.5), (20, 0.0), (20, 0.5)].into_iter().enumerate() {
        let seed = 40 + i as u64;
        let inst = instance(n, noise, seed);
        let sol = solve(&inst, seed);
        let implicit = solution_jacobians(&inst.corrs, &inst.k, &sol).unwrap();
        for which in InputKind::ALL {
            let fd = fd_jacobian_oracle(&inst.corrs, &inst.k, &sol, which, 1e-5, &cfg).unwrap();
            assert_eq!(fd.solver_calls, 2 * which.dim(n));
            let err = relative(&to_dmatrix(implicit.get(which)), &fd.jacobian);
            assert!(err <= 1e-3, "n={n} noise={noise} {}: {err:e}", which.name());
        }
    }
}

#[test]
fn a_large_difference_step_disagrees() {
    let inst = instance(8, 0.5, 3);
    let sol = solve(&inst, 3);
    let implicit = solution_jacobians(&inst.corrs, &inst.k, &sol).unwrap();
    let fd = fd_jacobian_oracle(&inst.corrs, &inst.k, &sol, InputKind::Z, 1e-1, &SolverConfig::default()).unwrap();
    let err = relative(&to_dmatrix(&implicit.dg_dz), &fd.jacobian);
    assert!(err > 1e-3, "truncation error {err:e} should exceed the tolerance");
}

#[test]
fn collinear_points_have_a_singular_hessian() {
    let k = Intrinsics::new(800.0, 700.0, 400.0, 300.0).unwrap();
    let pose = Pose::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.0, 4.0));
    let z: Vec<Vector3<f64>> = (0..6)
        .map(|i| Vector3::new(0.1 * i as f64, -0.05 * i as f64, 0.02 * i as f64))
        .collect();
    let x = unflatten2(project(&z, &pose, &k).unwrap().as_slice());
    let jac = constraint_jacobians(&x, &pose, &z, &k).unwrap();
    assert!(matches!(
        implicit_jacobians(&jac),
        Err(Error::SingularStationaryHessian { .. })
    ));
}

#[test]
fn two_points_have_a_singular_hessian() {
    let k = Intrinsics::new(800.0, 700.0, 400.0, 300.0).unwrap();
    let pose = Pose::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.0, 4.0));
    let z = vec![Vector3::new(0.2, 0.1, -0.1), Vector3::new(-0.3, 0.2, 0.1)];
    let x = unflatten2(project(&z, &pose, &k).unwrap().as_slice());
    let jac = constraint_jacobians(&x, &pose, &z, &k).unwrap();
    assert!(matches!(
        implicit_jacobians(&jac),
        Err(Error::SingularStationaryHessian { .. })
    ));
}

#[test]
fn duplicated_points_halve_each_copy_s_influence() {
    for seed in 0..5 {
        let inst = instance(8, 0.5, 60 + seed);
        let sol = solve(&inst, seed);
        let single = solution_jacobians(&inst.corrs, &inst.k, &sol).unwrap();

        let dup = Correspondences::new(twice(&inst.corrs.image), twice(&inst.corrs.world)).unwrap();
        let dup_sol = solve_pnp(&dup, &inst.k, &sol.pose, &SolverConfig::default()).unwrap();
        let doubled = solution_jacobians(&dup, &inst.k, &dup_sol).unwrap();
        let n = inst.corrs.len();
        for copy in 0..2 {
            let half = doubled.dg_dx.columns(2 * n * copy, 2 * n) * 2.0;
            let err = (half - &single.dg_dx).amax() / single.dg_dx.amax();
            assert!(err <= 1e-6, "seed {seed} copy {copy}: {err:e}");
        }
        let err = (&doubled.dg_dk - &single.dg_dk).amax() / single.dg_dk.amax();
        assert!(err <= 1e-6, "seed {seed}: K Jacobian changed by {err:e}");
    }
}

#[test]
fn newton_step_with_the_hessian_annihilates_f() {
    for seed in 0..10 {
        let inst = instance(8, 0.5, 70 + seed);
        let sol = solve(&inst, seed);
        let (x, z, k) = (&inst.corrs.image, &inst.corrs.world, &inst.k);
        let near = Pose::from_vector(&(sol.pose.to_vector() + Vector6::repeat(1e-4)));
        let f = constraint_f(x, &near, z, k).unwrap();
        let jac = constraint_jacobians(x, &near, z, k).unwrap();
        let step = jac.df_dy.lu().solve(&f).unwrap();
        let after = constraint_f(x, &Pose::from_vector(&(near.to_vector() - step)), z, k).unwrap();
        assert!(
            after.norm() <= 1e-3 * f.norm(),
            "seed {seed}: {:e} -> {:e}",
            f.norm(),
            after.norm()
        );
    }
}

/// `l(y) = |pi(z|y) - target|^2` for a fixed set of target pixels.
fn pose_loss(z: &[Vector3<f64>], pose: &Pose, k: &Intrinsics, target: &DVector<f64>) -> (f64, Vector6<f64>) {
    let (pi, j) = project_with_pose_jacobian(z, pose, k).unwrap();
    let d = pi - target;
    let g = j.tr_mul(&d) * 2.0;
    (d.norm_squared(), Vector6::from_iterator(g.iter().copied()))
}

#[test]
fn composite_gradient_matches_re_solved_differences() {
    let cfg = SolverConfig::default();
    for seed in 0..5 {
        let inst = instance(8, 0.5, 80 + seed);
        let sol = solve(&inst, seed);
        let target = project(&inst.corrs.world, &inst.truth, &inst.k).unwrap();
        let shifted = Pose::new(inst.truth.rot, inst.truth.trans + Vector3::new(0.05, -0.02, 0.1));
        let target = &target + (project(&inst.corrs.world, &shifted, &inst.k).unwrap() - &target) * 0.5;
        let (_, grad_y) = pose_loss(&inst.corrs.world, &sol.pose, &inst.k, &target);
        let jac = solution_jacobians(&inst.corrs, &inst.k, &sol).unwrap();
        let grad_x = backward(&jac, &grad_y).grad_x;

        let h = 1e-5;
        let fd = DVector::from_fn(grad_x.len(), |i, _| {
            let at = |d: f64| {
                let mut c = inst.corrs.clone();
                c.image[i / 2][i % 2] += d;
                let s = solve_pnp(&c, &inst.k, &sol.pose, &cfg).unwrap();
                pose_loss(&c.world, &s.pose, &inst.k, &target).0
            };
            (at(h) - at(-h)) / (2.0 * h)
        });
        let err = (&grad_x - &fd).amax() / fd.amax();
        assert!(err <= 1e-3, "seed {seed}: {err:e}");
    }
}

#[test]
fn a_small_step_against_the_gradient_decreases_the_loss() {
    let cfg = SolverConfig::default();
    for seed in 0..20 {
        let inst = instance(8, 0.5, 90 + seed);
        let sol = solve(&inst, seed);
        let shifted = Pose::new(inst.truth.rot, inst.truth.trans + Vector3::new(0.1, 0.05, -0.1));
        let target = project(&inst.corrs.world, &shifted, &inst.k).unwrap();
        let (before, grad_y) = pose_loss(&inst.corrs.world, &sol.pose, &inst.k, &target);
        let grad_x = backward(&solution_jacobians(&inst.corrs, &inst.k, &sol).unwrap(), &grad_y).grad_x;

        let eps = 1e-3 / grad_x.amax();
        let mut moved = inst.corrs.clone();
        for (i, p) in moved.image.iter_mut().enumerate() {
            *p -= Vector2::new(grad_x[2 * i], grad_x[2 * i + 1]) * eps;
        }
        let next = solve_pnp(&moved, &inst.k, &sol.pose, &cfg).unwrap();
        let (after, _) = pose_loss(&moved.world, &next.pose, &inst.k, &target);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}
