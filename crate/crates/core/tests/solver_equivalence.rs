//! Each specialized solver against the generic engine or a second route to
//! the same answer.

use gisot_core::baseline::{marginal_blocks, sinkhorn, stacked_gis_sinkhorn};
use gisot_core::conic::{self, ConicLayout, LiftedProblem};
use gisot_core::kernel::squared_distance_cost;
use gisot_core::martingale::{self, martingale_gis_update, martingale_matrix, MartingaleOptions};
use gisot_core::moment::{interval_experiment, solve_dual};
use gisot_core::oracle::{project_affine, project_intersection};
use gisot_core::weak::{self, WeakOptions};
use gisot_core::{
    gis_step, normalize, run_mixed, AffineBlock, BlockSchedule, DenseKernel, KernelOperator,
    Matrix, StopRule, TraceOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

fn random_histogram(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

#[test]
fn sinkhorn_is_the_two_block_scaling_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = grid(8);
    let k = DenseKernel::from_cost(&squared_distance_cost(&x, &x), 0.1).unwrap();
    let (mu, nu) = (random_histogram(&mut rng, 8), random_histogram(&mut rng, 8));
    let stop = StopRule::new(1e-13, 100_000).unwrap();
    let plan = sinkhorn(&mu, &nu, &k, &stop).unwrap().plan(&k);

    let (rows, cols) = marginal_blocks(&mu, &nu);
    let sched = BlockSchedule::new(vec![
        AffineBlock::scaling(rows, mu.clone()).unwrap(),
        AffineBlock::scaling(cols, nu.clone()).unwrap(),
    ])
    .unwrap();
    let sol = run_mixed(k.matrix().as_slice(), &sched, &stop).unwrap();
    assert!(sol.converged());
    assert!(sup(plan.entries().as_slice(), &sol.p) < 1e-12);
}

#[test]
fn half_exponent_is_gis_on_the_stacked_marginals() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = grid(6);
    let k = DenseKernel::from_cost(&squared_distance_cost(&x, &x), 0.2).unwrap();
    let (mu, nu) = (random_histogram(&mut rng, 6), random_histogram(&mut rng, 6));
    let (rows, cols) = marginal_blocks(&mu, &nu);
    let stacked = Matrix::vstack(&[&rows, &cols]).unwrap();
    let b: Vec<f64> = mu.iter().chain(&nu).copied().collect();
    let sched = BlockSchedule::new(vec![AffineBlock::gis(stacked, b).unwrap()]).unwrap();
    // fixed cycle budgets, so both runs stop after the same number of steps
    for cycles in [1, 7, 40] {
        let stop = StopRule::new(1e-300, cycles).unwrap();
        let a = stacked_gis_sinkhorn(&mu, &nu, &k, 0.5, &stop)
            .unwrap()
            .plan(&k);
        let g = run_mixed(k.matrix().as_slice(), &sched, &stop).unwrap();
        assert!(
            sup(a.entries().as_slice(), &g.p) < 1e-14,
            "after {cycles} cycles"
        );
    }
}

#[test]
fn moment_dual_matches_the_primal_schedule() {
    let problem = interval_experiment(20).unwrap();
    let stop = StopRule::new(1e-12, 1_000_000).unwrap();
    let dual = solve_dual(&problem, &stop).unwrap();
    assert!(dual.converged());

    let mu = problem.mu.weights().to_vec();
    let m = mu.len();
    let (rows, _) = marginal_blocks(&mu, &mu);
    let a = problem.constraints.a();
    let flat = Matrix::from_fn(a.rows(), m * m, |r, c| a.get(r, c % m));
    let sched = BlockSchedule::new(vec![
        AffineBlock::scaling(rows, mu).unwrap(),
        AffineBlock::gis(flat, problem.constraints.b().to_vec()).unwrap(),
    ])
    .unwrap();
    let primal = run_mixed(problem.kernel.matrix().as_slice(), &sched, &stop).unwrap();
    assert!(primal.converged());
    let nu: Vec<f64> = (0..m)
        .map(|j| (0..m).map(|i| primal.p[i * m + j]).sum())
        .collect();
    assert!(sup(&nu, &dual.nu) < 1e-9, "{}", sup(&nu, &dual.nu));
}

#[test]
fn martingale_update_is_a_per_row_gis_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..7).map(|i| -1.0 + i as f64 / 3.0).collect();
    let mu = random_histogram(&mut rng, 7);
    let pi = Matrix::from_fn(7, 7, |_, _| rng.random_range(0.01..0.2));
    let a = martingale_matrix(&x).unwrap();
    let mut fast = pi.clone();
    martingale_gis_update(&mut fast, &a, Some(&mu)).unwrap();
    for i in 0..7 {
        let n = normalize(
            &Matrix::from_rows(std::slice::from_ref(&x)).unwrap(),
            &[x[i]],
        )
        .unwrap();
        assert_eq!(n.a, a);
        let b: Vec<f64> = n.b.iter().map(|v| v * mu[i]).collect();
        let slow = gis_step(pi.row(i), &n.a, &b).unwrap();
        assert!(sup(fast.row(i), &slow) < 1e-15);
    }
}

#[test]
fn martingale_weight_cancels_in_the_row_scaling() {
    let p = martingale::curtain_fixture_with(30, 3, 0.05).unwrap();
    let stop = StopRule::new(1e-300, 25).unwrap();
    let record = |explicit| MartingaleOptions {
        explicit_mu_factor: explicit,
        record_plans: true,
    };
    let a = martingale::solve_with(&p, &stop, record(false)).unwrap();
    let b = martingale::solve_with(&p, &stop, record(true)).unwrap();
    for (pa, pb) in a.plans.iter().zip(&b.plans) {
        let rel = pa
            .as_slice()
            .iter()
            .zip(pb.as_slice())
            .map(|(u, v)| (u - v).abs() / u.abs().max(1e-300))
            .fold(0.0, f64::max);
        assert!(rel < 1e-12, "{rel}");
    }
}

#[test]
fn martingale_refuses_measures_out_of_order() {
    let (mu, nu) = martingale::curtain_measures(40, 4).unwrap();
    let x = mu.coords().unwrap().to_vec();
    let k = DenseKernel::from_cost(&squared_distance_cost(&x, &x), 0.05).unwrap();
    // swapping the roles turns a spread into a contraction
    assert!(martingale::MartingaleProblem::new(nu, mu, k).is_err());
}

#[test]
fn weak_half_scaling_is_exact_per_iterate() {
    let p = weak::curtain_weak_fixture(1e-10).unwrap();
    let stop = StopRule::new(1e-300, 30).unwrap();
    let opts = |s| WeakOptions {
        mass_scale: s,
        record_plans: true,
        ..WeakOptions::default()
    };
    let full = weak::solve_with(&p, &stop, opts(1.0)).unwrap();
    let half = weak::solve_with(&p, &stop, opts(0.5)).unwrap();
    assert_eq!(full.plans.len(), 30);
    for ((fx, fy), (hx, hy)) in full.plans.iter().zip(&half.plans) {
        let twice = |m: &Matrix| m.as_slice().iter().map(|v| 2.0 * v).collect::<Vec<_>>();
        assert!(sup(&twice(hx), fx.as_slice()) <= 1e-12);
        assert!(sup(&twice(hy), fy.as_slice()) <= 1e-12);
    }
    assert_eq!(full.costs, half.costs);
}

#[test]
fn weak_with_point_masses_is_a_martingale_relaxation() {
    // Y = X and ε → 0 leave πʸ diagonal, so πˣ must keep every row mean
    let p = weak::curtain_weak_fixture(1e-10).unwrap();
    let s = weak::solve(&p, &StopRule::new(1e-5, 100_000).unwrap()).unwrap();
    assert!(s.converged());
    let x = p.x();
    let residual = martingale::martingale_residual(s.pi_x.entries(), x, p.mu.weights()).unwrap();
    assert!(residual.iter().all(|r| r.abs() < 1e-4));
    let gap = weak::jensen_gap(s.pi_y.entries(), p.mu.weights(), x, &p.y, weak::squared).unwrap();
    assert!(gap >= -1e-10);
}

fn balanced(m: usize, eps: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, LiftedProblem) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = grid(m);
    let (mu, nu) = (random_histogram(&mut rng, m), random_histogram(&mut rng, m));
    let xc = x.clone();
    let p = LiftedProblem::new(
        &mu,
        &nu,
        1.0,
        Some(1),
        Some(1),
        |s| conic::default_cost(&xc, &xc, s, 1.0),
        eps,
    )
    .unwrap();
    (x, mu, nu, p)
}

#[test]
fn conic_with_single_levels_is_balanced_ot() {
    let (x, mu, nu, p) = balanced(4, 0.1, 6);
    let stop = StopRule::new(1e-12, 1_000_000).unwrap();
    let sol = conic::solve(&p, &stop).unwrap();
    assert!(sol.converged());
    let k = DenseKernel::from_cost(&squared_distance_cost(&x, &x), 0.1).unwrap();
    let reference = sinkhorn(&mu, &nu, &k, &stop).unwrap().plan(&k);
    let plan = sol.coupling.location_plan();
    assert!(sup(plan.as_slice(), reference.entries().as_slice()) < 1e-6);
}

#[test]
fn conic_solution_matches_the_oracle() {
    let x = [0.0, 1.0];
    let (mu, nu) = ([1.0, 1.0], [1.0, 2.0]);
    let p = LiftedProblem::new(
        &mu,
        &nu,
        1.0,
        None,
        None,
        |s| conic::default_cost(&x, &x, s, 1.0),
        0.5,
    )
    .unwrap();
    let stop = StopRule::new(1e-12, 1_000_000).unwrap();
    let sol = conic::solve(&p, &stop).unwrap();
    assert!(sol.converged());
    let (a, b) = p.stacked_system().unwrap();
    let oracle = project_affine(&p.kernel(), &a, &b, 1e-14).unwrap();
    assert!(sup(&sol.coupling.pi, &oracle) < 1e-6);
    let zero_cost =
        LiftedProblem::new(&mu, &nu, 1.0, None, None, |s| Ok(vec![0.0; s.len()]), 1.0).unwrap();
    let flat = conic::solve(&zero_cost, &stop).unwrap();
    let (a, b) = zero_cost.stacked_system().unwrap();
    let blocks = [AffineBlock::gis(a, b).unwrap()];
    let oracle = project_intersection(&zero_cost.kernel(), &blocks, 1e-14).unwrap();
    assert!(sup(&flat.coupling.pi, &oracle) < 1e-6);
}

#[test]
fn conic_split_blocks_reach_the_same_coupling() {
    let (_, p) = conic::conic_fixture().unwrap();
    let stop = StopRule::new(1e-11, 1_000_000).unwrap();
    let opts = TraceOptions::default();
    let stacked = conic::solve_with(&p, &stop, ConicLayout::Stacked, &opts).unwrap();
    let split = conic::solve_with(&p, &stop, ConicLayout::Split, &opts).unwrap();
    assert!(stacked.converged() && split.converged());
    assert!(sup(&stacked.coupling.pi, &split.coupling.pi) < 1e-8);
}

#[test]
fn conic_init_is_exact_on_random_integer_masses() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let m = rng.random_range(1..5);
        let n = rng.random_range(1..5);
        let mu: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64).collect();
        let nu: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        if mu.iter().sum::<f64>() == 0.0 || nu.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let p =
            LiftedProblem::new(&mu, &nu, 1.0, None, None, |s| Ok(vec![0.0; s.len()]), 1.0).unwrap();
        let c = conic::feasible_init(&p).unwrap();
        let (rs, rt, r1) = conic::conic_residuals(&c, &p.mu, &p.nu).unwrap();
        assert!(rs.iter().chain(&rt).all(|v| v.abs() <= 1e-14) && r1.abs() <= 1e-14);
    }
}

#[test]
fn kernel_operator_matches_dense_products() {
    let x = grid(5);
    let k = DenseKernel::from_cost(&squared_distance_cost(&x, &x), 0.3).unwrap();
    let v = [0.1, 0.4, 0.2, 0.2, 0.1];
    assert_eq!(k.apply(&v).unwrap(), k.matrix().matvec(&v).unwrap());
    assert_eq!(
        k.apply_transpose(&v).unwrap(),
        k.matrix().matvec_transpose(&v).unwrap()
    );
}
