//! The mixed scaling/GIS iteration against an independent dual Newton solver.

use gisot_core::oracle::{project_affine, project_intersection};
use gisot_core::{
    fejer_audit, run_mixed, run_mixed_with, triangle_fixture, AffineBlock, BlockSchedule, Matrix,
    StopRule, TraceOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_simplex(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// A scaling block with up to two disjoint masks and a GIS block with
/// random signed rows, both consistent with a hidden interior point.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<AffineBlock>) {
    let m = rng.random_range(4..=12);
    let x = random_simplex(rng, m);
    let masks = rng.random_range(1..=2);
    let mut owner: Vec<usize> = (0..m).map(|_| rng.random_range(0..=masks)).collect();
    owner[0] = 1;
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for k in 1..=masks {
        let row: Vec<f64> = owner
            .iter()
            .map(|&o| if o == k { 1.0 } else { 0.0 })
            .collect();
        if row.iter().any(|v| *v > 0.0) {
            b.push(row.iter().zip(&x).map(|(r, p)| r * p).sum());
            rows.push(row);
        }
    }
    let scaling = AffineBlock::scaling(Matrix::from_rows(&rows).unwrap(), b).unwrap();
    let g = rng.random_range(1..=6 - rows.len());
    let a = Matrix::from_fn(g, m, |_, _| rng.random_range(-1.0..1.0));
    let gb = a.matvec(&x).unwrap();
    let gis = AffineBlock::gis(a, gb).unwrap();
    (random_simplex(rng, m), vec![scaling, gis])
}

#[test]
fn mixed_limit_matches_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..50 {
        let (q, blocks) = random_instance(&mut rng);
        let sched = BlockSchedule::new(blocks.clone()).unwrap();
        let sol = run_mixed(&q, &sched, &StopRule::new(1e-13, 2_000_000).unwrap()).unwrap();
        assert!(sol.converged(), "instance {n} did not converge");
        let oracle = project_intersection(&q, &blocks, 1e-14)
            .unwrap_or_else(|e| panic!("instance {n}: {e}"));
        assert!(
            sup(&sol.p, &oracle) < 1e-6,
            "instance {n}: {}",
            sup(&sol.p, &oracle)
        );
    }
}

#[test]
fn every_step_dominates_its_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let opts = TraceOptions {
        record_iterates: true,
        ..TraceOptions::default()
    };
    for _ in 0..10 {
        let (q, blocks) = random_instance(&mut rng);
        let sched = BlockSchedule::new(blocks.clone()).unwrap();
        let sol =
            run_mixed_with(&q, &sched, &StopRule::new(1e-11, 200_000).unwrap(), &opts).unwrap();
        let star = project_intersection(&q, &blocks, 1e-14).unwrap();
        let slacks = fejer_audit(&sol.trace, &star).unwrap();
        let worst = slacks.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(worst >= -1e-10, "slack {worst}");
    }
}

#[test]
fn triangle_reaches_the_projection_in_one_hundred_steps() {
    let (q, sched) = triangle_fixture().unwrap();
    let sol = run_mixed(&q, &sched, &StopRule::new(1e-300, 100).unwrap()).unwrap();
    assert_eq!(sol.trace.len(), 100);
    let a = Matrix::from_rows(&[[0.1, 0.5, 0.4]]).unwrap();
    let oracle = project_affine(&q, &a, &[0.42], 1e-15).unwrap();
    assert!(sup(&sol.p, &oracle) < 1e-6, "{:?} vs {:?}", sol.p, oracle);
}

#[test]
fn scaling_only_schedule_is_one_pass() {
    // disjoint masks covering everything: one pass already lands on the projection
    let a = Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]).unwrap();
    let block = AffineBlock::scaling(a.clone(), vec![0.3, 0.7]).unwrap();
    let q = [0.1, 0.2, 0.3, 0.4];
    let sol = run_mixed(
        &q,
        &BlockSchedule::new(vec![block]).unwrap(),
        &StopRule::default(),
    )
    .unwrap();
    assert_eq!(sol.trace.len(), 1);
    let oracle = project_affine(&q, &a, &[0.3, 0.7], 1e-15).unwrap();
    assert!(sup(&sol.p, &oracle) < 1e-12);
}
