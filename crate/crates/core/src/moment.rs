//! Entropic OT from a fixed `μ` to a free target `ν` restricted by linear
//! moment constraints `A ν = b`.
//!
//! The primal problem alternates a row-marginal scaling with one GIS step on
//! the column marginal. In dual form both become updates of the scalings
//! `u`, `v` of `π = diag(u) K diag(v)`:
//!
//! ```text
//! u ← μ / K v
//! v ← v ⊙ exp(A'ᵀ log(b' / A'(v ⊙ Kᵀu)))
//! ```
//!
//! so the plan itself is never formed.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{check_len, Error, Result};
use crate::gis::{gis_factors, AffineBlock, StopRule};
use crate::kernel::{
    squared_distance_cost, torus_squared_distance_cost, DenseKernel, KernelOperator,
};
use crate::kl::kl_divergence;
use crate::math::{atan2, cos, exp, sin, sqrt};
use crate::matrix::{CouplingPlan, Histogram, Matrix};
use crate::trace::{ConvergenceTrace, CycleRecord};

/// Entropy weight of the torus fixture. Picked so that the rotated target
/// splits into two modes on the 500-point grid.
pub const TORUS_EPSILON: f64 = 0.1;

/// `min_ν OT_ε(μ, ν)` subject to `A ν = b`.
#[derive(Debug, Clone)]
pub struct MomentProblem<K> {
    pub mu: Histogram,
    pub constraints: AffineBlock,
    pub kernel: K,
    pub epsilon: f64,
}

impl<K> MomentProblem<K> {
    /// Same problem with a different kernel implementation.
    pub fn with_kernel<K2>(self, kernel: K2) -> MomentProblem<K2> {
        MomentProblem {
            mu: self.mu,
            constraints: self.constraints,
            kernel,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MomentOptions {
    /// Keep `(u, v)` after every half step.
    pub record_scalings: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSolution {
    pub nu: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Violations per cycle: `[row marginal, raw moment system]`.
    pub trace: ConvergenceTrace,
    /// `(u, v)` before the first and after every half step, if recorded.
    pub scalings: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MomentSolution {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

pub fn solve_dual<K: KernelOperator>(
    problem: &MomentProblem<K>,
    stop: &StopRule,
) -> Result<MomentSolution> {
    solve_dual_with(problem, stop, MomentOptions::default())
}

pub fn solve_dual_with<K: KernelOperator>(
    problem: &MomentProblem<K>,
    stop: &StopRule,
    opts: MomentOptions,
) -> Result<MomentSolution> {
    stop.validate()?;
    let kernel = &problem.kernel;
    let mu = problem.mu.weights();
    check_len(kernel.rows(), mu.len())?;
    check_len(kernel.cols(), problem.constraints.cols())?;
    let (a_norm, b_norm) = problem.constraints.working_system();
    let block = &problem.constraints;

    let mut u = vec![0.0; kernel.rows()];
    let mut v = vec![1.0; kernel.cols()];
    let mut kv = kernel.apply(&v)?;
    let mut trace = ConvergenceTrace::default();
    let mut scalings = Vec::new();
    if opts.record_scalings {
        scalings.push((vec![1.0; kernel.rows()], v.clone()));
    }
    let mut nu = vec![0.0; v.len()];

    for cycle in 0..stop.max_cycles {
        let row_kl = if cycle == 0 {
            // u = 1 initially
            kl_divergence(mu, &kv)?
        } else {
            let row: Vec<f64> = u.iter().zip(&kv).map(|(a, b)| a * b).collect();
            kl_divergence(mu, &row)?
        };
        for (i, (ui, (&m, &k))) in u.iter_mut().zip(mu.iter().zip(&kv)).enumerate() {
            *ui = if m == 0.0 {
                0.0
            } else if k > 0.0 {
                m / k
            } else {
                return Err(Error::Underflow { index: i });
            };
        }
        let ktu = kernel.apply_transpose(&u)?;
        if opts.record_scalings {
            scalings.push((u.clone(), v.clone()));
        }
        nu.iter_mut()
            .zip(v.iter().zip(&ktu))
            .for_each(|(n, (a, b))| *n = a * b);
        let moment_kl = kl_divergence(b_norm, &a_norm.matvec(&nu)?)?;
        let f = gis_factors(&nu, a_norm, b_norm)?;
        v.iter_mut().zip(&f).for_each(|(x, y)| *x *= y);
        if opts.record_scalings {
            scalings.push((u.clone(), v.clone()));
        }
        nu.iter_mut()
            .zip(v.iter().zip(&ktu))
            .for_each(|(n, (a, b))| *n = a * b);
        kv = kernel.apply(&v)?;
        let row_violation = u
            .iter()
            .zip(&kv)
            .zip(mu)
            .map(|((a, b), m)| (a * b - m).abs())
            .fold(0.0, f64::max);
        let moment_violation = block.raw_violation(&nu)?;
        trace.cycles.push(CycleRecord {
            violations: vec![row_violation, moment_violation],
            kl_residuals: vec![row_kl, moment_kl],
            kl_to_reference: None,
            mass: nu.iter().sum(),
            elapsed: None,
        });
        if row_violation <= stop.tol && moment_violation <= stop.tol {
            trace.converged = true;
            break;
        }
    }
    Ok(MomentSolution {
        nu,
        u,
        v,
        trace,
        scalings,
    })
}

/// `diag(u) K diag(v)`, refused when it would exceed `budget` entries.
pub fn reconstruct_plan<K: KernelOperator + ?Sized>(
    u: &[f64],
    v: &[f64],
    kernel: &K,
    budget: usize,
) -> Result<CouplingPlan> {
    let entries = kernel.rows() * kernel.cols();
    if entries > budget {
        return Err(Error::TooLarge { entries, budget });
    }
    check_len(kernel.rows(), u.len())?;
    check_len(kernel.cols(), v.len())?;
    let mut k = kernel.to_dense();
    for (i, &ui) in u.iter().enumerate() {
        for (kij, vj) in k.row_mut(i).iter_mut().zip(v) {
            *kij *= ui * vj;
        }
    }
    Ok(CouplingPlan::from_matrix_unchecked(k))
}

fn normalized_pdf(x: &[f64], log_density: impl Fn(f64) -> f64) -> Vec<f64> {
    let w: Vec<f64> = x.iter().map(|&t| exp(log_density(t))).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Gaussian density `N(mean, sd²)` evaluated on `x` and normalized to unit mass.
pub fn sampled_gaussian(x: &[f64], mean: f64, sd: f64) -> Vec<f64> {
    normalized_pdf(x, |t| -(t - mean) * (t - mean) / (2.0 * sd * sd))
}

/// Von Mises density `M(mean, kappa)` evaluated on `x` and normalized.
pub fn sampled_von_mises(x: &[f64], mean: f64, kappa: f64) -> Vec<f64> {
    // shift by kappa so the largest exponent is zero
    normalized_pdf(x, |t| kappa * (cos(t - mean) - 1.0))
}

/// Unit-interval fixture on `m` points: `μ ~ N(0.4, 0.1²)`, squared cost,
/// `ε = 0.01`, target mean 0.5 and second moment `0.5² + 0.15²`.
pub fn interval_experiment(m: usize) -> Result<MomentProblem<DenseKernel>> {
    if m < 3 {
        return Err(Error::InvalidInput(
            "interval grid needs at least 3 points".into(),
        ));
    }
    let epsilon = 0.01;
    let x: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let mu = sampled_gaussian(&x, 0.4, 0.1);
    let a = Matrix::from_rows(&[x.clone(), x.iter().map(|t| t * t).collect()])?;
    let b = vec![0.5, 0.5 * 0.5 + 0.15 * 0.15];
    Ok(MomentProblem {
        mu: Histogram::on_grid(mu, x.clone())?,
        constraints: AffineBlock::gis(a, b)?,
        kernel: DenseKernel::from_cost(&squared_distance_cost(&x, &x), epsilon)?,
        epsilon,
    })
}

pub fn build_interval_experiment() -> Result<MomentProblem<DenseKernel>> {
    interval_experiment(100)
}

/// Circular mean `z = Σ μᵢ e^{i xᵢ}` as `(re, im)`.
pub fn circular_mean(mu: &[f64], x: &[f64]) -> (f64, f64) {
    let re = mu.iter().zip(x).map(|(m, t)| m * cos(*t)).sum();
    let im = mu.iter().zip(x).map(|(m, t)| m * sin(*t)).sum();
    (re, im)
}

/// `z' = |z| e^{i(arg z + π/2)}` as `(re, im)`.
pub fn rotated_quarter(z: (f64, f64)) -> (f64, f64) {
    let r = sqrt(z.0 * z.0 + z.1 * z.1);
    let phi = atan2(z.1, z.0) + PI / 2.0;
    (r * cos(phi), r * sin(phi))
}

/// Torus fixture on `m` points of `[−π, π)`: von Mises `μ` with mean −1 and
/// concentration `1/(0.2π)²`, squared wrap-around cost, and the constraint that
/// the circular mean of `ν` is that of `μ` rotated by a quarter turn.
pub fn torus_experiment(m: usize, epsilon: f64) -> Result<MomentProblem<DenseKernel>> {
    if m < 3 {
        return Err(Error::InvalidInput(
            "torus grid needs at least 3 points".into(),
        ));
    }
    let x = torus_grid(m);
    let kappa = 1.0 / ((0.2 * PI) * (0.2 * PI));
    let mu = sampled_von_mises(&x, -1.0, kappa);
    let z = rotated_quarter(circular_mean(&mu, &x));
    let a = Matrix::from_rows(&[
        x.iter().map(|t| cos(*t)).collect::<Vec<_>>(),
        x.iter().map(|t| sin(*t)).collect::<Vec<_>>(),
    ])?;
    Ok(MomentProblem {
        mu: Histogram::on_grid(mu, x.clone())?,
        constraints: AffineBlock::gis(a, vec![z.0, z.1])?,
        kernel: DenseKernel::from_cost(&torus_squared_distance_cost(&x, 2.0 * PI), epsilon)?,
        epsilon,
    })
}

pub fn build_torus_experiment() -> Result<MomentProblem<DenseKernel>> {
    torus_experiment(500, TORUS_EPSILON)
}

/// `xᵢ = −π + 2π i/M`, `i = 0, …, M−1`.
pub fn torus_grid(m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| -PI + 2.0 * PI * i as f64 / m as f64)
        .collect()
}

/// Strict local maxima of `w` on a cyclic grid; plateaus count once.
pub fn cyclic_local_maxima(w: &[f64]) -> usize {
    let m = w.len();
    if m < 3 {
        return usize::from(m > 0);
    }
    // compress runs of equal values, then count peaks on the cycle
    let mut runs: Vec<f64> = Vec::with_capacity(m);
    for &v in w {
        if runs.last() != Some(&v) {
            runs.push(v);
        }
    }
    if runs.len() > 1 && runs.first() == runs.last() {
        runs.pop();
    }
    let n = runs.len();
    if n == 1 {
        return 1;
    }
    (0..n)
        .filter(|&i| runs[i] > runs[(i + n - 1) % n] && runs[i] > runs[(i + 1) % n])
        .count()
}

/// Total-variation distance `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_fixture_data() {
        let p = build_interval_experiment().unwrap();
        let x = p.mu.coords().unwrap();
        assert_eq!(x.len(), 100);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[99], 1.0);
        assert!((x[1] - 1.0 / 99.0).abs() < 1e-15);
        assert_eq!(p.constraints.b(), &[0.5, 0.2725]);
        assert!((p.mu.total_mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_keeps_the_modulus() {
        let z = (0.3, -0.4);
        let r = rotated_quarter(z);
        assert!((r.0 * r.0 + r.1 * r.1 - 0.25).abs() < 1e-15);
        assert!((r.0 - 0.4).abs() < 1e-15 && (r.1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn local_maxima_counting() {
        assert_eq!(cyclic_local_maxima(&[0.0, 1.0, 0.0, 2.0, 0.0]), 2);
        assert_eq!(cyclic_local_maxima(&[3.0, 1.0, 0.0, 1.0]), 1);
        assert_eq!(cyclic_local_maxima(&[1.0, 2.0, 2.0, 1.0, 0.5]), 1);
        assert_eq!(cyclic_local_maxima(&[1.0, 1.0, 1.0]), 1);
    }

    #[test]
    fn plan_budget_is_enforced() {
        let k = DenseKernel::from_cost(&Matrix::zeros(3, 3), 1.0).unwrap();
        assert!(matches!(
            reconstruct_plan(&[1.0; 3], &[1.0; 3], &k, 8),
            Err(Error::TooLarge {
                entries: 9,
                budget: 8
            })
        ));
        let p = reconstruct_plan(&[1.0, 2.0, 3.0], &[1.0; 3], &k, 9).unwrap();
        assert_eq!(p.row_marginal(), vec![3.0, 6.0, 9.0]);
    }
}
