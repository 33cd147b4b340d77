//! Relaxed barycentric weak OT.
//!
//! The weak cost `Σᵢ μᵢ c(xᵢ, mᵢ)`, with `mᵢ` the mean of row `i` of `πˣ`, is
//! relaxed through Jensen's inequality to a linear cost on an auxiliary plan
//! `πʸ` over a grid `Y`, tied to `πˣ` by requiring equal row means. The
//! entropic version is a KL projection of `(1, K)` onto the marginal and
//! mean-consistency constraints, solved by scalings plus one GIS step per
//! cycle on the mean constraint.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::gis::StopRule;
use crate::math::{exp, ln, sup_norm_diff};
use crate::matrix::{CouplingPlan, Histogram, Matrix};
use crate::trace::{ConvergenceTrace, CycleRecord};

/// A cost `c(x, y)` between source points and means.
pub type CostFn = fn(f64, f64) -> f64;

/// `(x − y)²`.
pub fn squared(x: f64, y: f64) -> f64 {
    (x - y) * (x - y)
}

#[derive(Debug, Clone)]
pub struct WeakProblem {
    pub mu: Histogram,
    pub nu: Histogram,
    pub y: Vec<f64>,
    pub cost_fn: CostFn,
    pub epsilon: f64,
    cost: Matrix,
    b: Vec<f64>,
    ax: Matrix,
    ay: Matrix,
}

/// Normalized mean-consistency system `Aˣ π̄ˣᵀ + Aʸ π̄ʸᵀ = b` (per row, with
/// row-normalized plans). `Aˣ`, `Aʸ` are column-stochastic and `b` sums to 2.
pub fn build_constraints(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Matrix, Matrix)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("grids must be nonempty".into()));
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min(y) > min(x) || max(y) < max(x) {
        return Err(Error::InvalidAuxGrid);
    }
    let xi_x = min(x);
    let xi_y = -max(y);
    let mut xi_p = (max(x) - xi_x).max(-min(y) - xi_y);
    if !(xi_p > 0.0) {
        xi_p = 1.0;
    }
    let b = vec![-(xi_x + xi_y) / xi_p, 2.0 + (xi_x + xi_y) / xi_p];
    let xh: Vec<f64> = x.iter().map(|v| (v - xi_x) / xi_p).collect();
    let yh: Vec<f64> = y.iter().map(|v| (-v - xi_y) / xi_p).collect();
    let ax = Matrix::from_rows(&[xh.clone(), xh.iter().map(|v| 1.0 - v).collect()])?;
    let ay = Matrix::from_rows(&[yh.clone(), yh.iter().map(|v| 1.0 - v).collect()])?;
    Ok((b, ax, ay))
}

impl WeakProblem {
    pub fn new(
        mu: Histogram,
        nu: Histogram,
        y: Vec<f64>,
        cost_fn: CostFn,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        let x = mu
            .coords()
            .ok_or_else(|| Error::InvalidInput("μ needs grid coordinates".into()))?
            .to_vec();
        check_len(x.len(), nu.len())?;
        let (b, ax, ay) = build_constraints(&x, &y)?;
        let cost = Matrix::from_fn(x.len(), y.len(), |i, k| cost_fn(x[i], y[k]));
        Ok(Self {
            mu,
            nu,
            y,
            cost_fn,
            epsilon,
            cost,
            b,
            ax,
            ay,
        })
    }

    pub fn x(&self) -> &[f64] {
        self.mu.coords().expect("checked at construction")
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn constraints(&self) -> (&[f64], &Matrix, &Matrix) {
        (&self.b, &self.ax, &self.ay)
    }
}

/// Inserts `factor − 1` equispaced points into every cell of `Y`.
pub fn refine_aux_grid(problem: &WeakProblem, factor: usize) -> Result<WeakProblem> {
    if factor < 2 {
        return Err(Error::InvalidInput(
            "refinement factor must be at least 2".into(),
        ));
    }
    let y = &problem.y;
    let mut fine = Vec::with_capacity((y.len() - 1) * factor + 1);
    for w in y.windows(2) {
        for s in 0..factor {
            fine.push(w[0] + (w[1] - w[0]) * s as f64 / factor as f64);
        }
    }
    if let Some(last) = y.last() {
        fine.push(*last);
    }
    WeakProblem::new(
        problem.mu.clone(),
        problem.nu.clone(),
        fine,
        problem.cost_fn,
        problem.epsilon,
    )
}

/// Which quantity decides convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeakStopKind {
    /// Max over marginal and mean-consistency violations.
    #[default]
    Violation,
    /// Absolute change of the weak cost between cycles.
    CostChange,
}

#[derive(Debug, Clone, Copy)]
pub struct WeakOptions {
    pub stop_kind: WeakStopKind,
    /// Multiplies every right-hand side and both initial plans.
    pub mass_scale: f64,
    pub record_plans: bool,
}

impl Default for WeakOptions {
    fn default() -> Self {
        Self {
            stop_kind: WeakStopKind::Violation,
            mass_scale: 1.0,
            record_plans: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakSolution {
    pub pi_x: CouplingPlan,
    pub pi_y: CouplingPlan,
    pub means: Vec<f64>,
    pub weak_cost: f64,
    /// Violations per cycle, measured at unit mass scale:
    /// `[πˣ rows, πˣ columns, πʸ rows, max |πˣx − πʸy|]`.
    pub trace: ConvergenceTrace,
    pub costs: Vec<f64>,
    pub plans: Vec<(Matrix, Matrix)>,
}

impl WeakSolution {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// `mᵢ = (1/μᵢ) Σⱼ πˣᵢⱼ xⱼ`, zero for empty rows.
pub fn row_means(pi: &Matrix, mu: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len(pi.rows(), mu.len())?;
    let px = pi.matvec(x)?;
    Ok(px
        .iter()
        .zip(mu)
        .map(|(p, m)| if *m > 0.0 { p / m } else { 0.0 })
        .collect())
}

/// `Σᵢ μᵢ c(xᵢ, mᵢ)`; rows with `μᵢ = 0` carry no mass and are skipped.
pub fn weak_cost(pi_x: &Matrix, mu: &[f64], x: &[f64], cost_fn: CostFn) -> Result<f64> {
    Ok(cost_at_means(mu, x, &row_means(pi_x, mu, x)?, cost_fn))
}

fn cost_at_means(mu: &[f64], x: &[f64], m: &[f64], cost_fn: CostFn) -> f64 {
    mu.iter()
        .zip(x.iter().zip(m))
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, (xi, mi))| w * cost_fn(*xi, *mi))
        .sum()
}

/// `Σᵢₖ πʸᵢₖ c(xᵢ, yₖ) − Σᵢ μᵢ c(xᵢ, m̃ᵢ)` with `m̃ᵢ` the row means of `πʸ`.
/// Nonnegative whenever `c(xᵢ, ·)` is convex. At a mean-consistent pair it
/// is the gap between the relaxed and the weak cost.
pub fn jensen_gap(pi_y: &Matrix, mu: &[f64], x: &[f64], y: &[f64], cost_fn: CostFn) -> Result<f64> {
    check_len(pi_y.rows(), x.len())?;
    check_len(pi_y.cols(), y.len())?;
    let mut relaxed = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        for (p, &yk) in pi_y.row(i).iter().zip(y) {
            if *p > 0.0 {
                relaxed += p * cost_fn(xi, yk);
            }
        }
    }
    Ok(relaxed - cost_at_means(mu, x, &row_means(pi_y, mu, y)?, cost_fn))
}

/// `max |Σⱼ πˣᵢⱼ xⱼ − Σₖ πʸᵢₖ yₖ|`.
pub fn mean_consistency(pi_x: &Matrix, pi_y: &Matrix, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(sup_norm_diff(&pi_x.matvec(x)?, &pi_y.matvec(y)?))
}

fn scale_rows(pi: &mut Matrix, target: &[f64]) -> Result<()> {
    let sums = pi.row_sums();
    for (i, (&t, &s)) in target.iter().zip(&sums).enumerate() {
        let f = if s > 0.0 {
            t / s
        } else if t > 0.0 {
            return Err(Error::InfeasibleScaling { target: t });
        } else {
            0.0
        };
        pi.row_mut(i).iter_mut().for_each(|v| *v *= f);
    }
    Ok(())
}

fn scale_cols(pi: &mut Matrix, target: &[f64]) -> Result<()> {
    let sums = pi.col_sums();
    let mut f = vec![0.0; sums.len()];
    for (fj, (&t, &s)) in f.iter_mut().zip(target.iter().zip(&sums)) {
        if s > 0.0 {
            *fj = t / s;
        } else if t > 0.0 {
            return Err(Error::InfeasibleScaling { target: t });
        }
    }
    for i in 0..pi.rows() {
        pi.row_mut(i)
            .iter_mut()
            .zip(&f)
            .for_each(|(v, fj)| *v *= fj);
    }
    Ok(())
}

/// Initial auxiliary plan `exp(−c/ε)`, with entries below the smallest
/// positive normal double clamped up to it.
pub fn initial_aux_plan(cost: &Matrix, epsilon: f64) -> Matrix {
    let floor = ln(f64::MIN_POSITIVE);
    let mut k = cost.clone();
    k.as_mut_slice().iter_mut().for_each(|c| {
        let e = -*c / epsilon;
        *c = if e < floor {
            f64::MIN_POSITIVE
        } else {
            exp(e).max(f64::MIN_POSITIVE)
        };
    });
    k
}

/// One mean-consistency GIS step applied to both plans.
fn mean_gis_step(
    pi_x: &mut Matrix,
    pi_y: &mut Matrix,
    ax: &Matrix,
    ay: &Matrix,
    b: &[f64],
) -> Result<()> {
    let m = pi_x.rows();
    for i in 0..m {
        let rx = pi_x.row(i);
        let ry = pi_y.row(i);
        let mut l = [0.0; 2];
        let mut kill = [false; 2];
        for r in 0..2 {
            let s: f64 = rx.iter().zip(ax.row(r)).map(|(p, a)| p * a).sum::<f64>()
                + ry.iter().zip(ay.row(r)).map(|(p, a)| p * a).sum::<f64>();
            if b[r] > 0.0 {
                if !(s > 0.0) {
                    return Err(Error::Infeasible {
                        row: i,
                        target: b[r],
                    });
                }
                l[r] = ln(b[r] / s);
            } else if s > 0.0 {
                kill[r] = true;
            }
        }
        let update = |row: &mut [f64], a: &Matrix| {
            let (a0, a1) = (a.row(0), a.row(1));
            for (j, p) in row.iter_mut().enumerate() {
                if (kill[0] && a0[j] != 0.0) || (kill[1] && a1[j] != 0.0) {
                    *p = 0.0;
                } else {
                    *p *= exp(a0[j] * l[0] + a1[j] * l[1]);
                }
            }
        };
        update(pi_x.row_mut(i), ax);
        update(pi_y.row_mut(i), ay);
    }
    Ok(())
}

pub fn solve(problem: &WeakProblem, stop: &StopRule) -> Result<WeakSolution> {
    solve_with(problem, stop, WeakOptions::default())
}

/// Cycles `ν` scaling of `πˣ`, the joint mean GIS step and `μ` scaling of
/// both plans, from `πˣ = 1` and `πʸ = exp(−c/ε)`.
pub fn solve_with(
    problem: &WeakProblem,
    stop: &StopRule,
    opts: WeakOptions,
) -> Result<WeakSolution> {
    stop.validate()?;
    if !(opts.mass_scale > 0.0) {
        return Err(Error::InvalidInput("mass scale must be positive".into()));
    }
    let s = opts.mass_scale;
    let x = problem.x().to_vec();
    let mu: Vec<f64> = problem.mu.weights().iter().map(|v| v * s).collect();
    let nu: Vec<f64> = problem.nu.weights().iter().map(|v| v * s).collect();
    let b: Vec<f64> = problem.b.iter().map(|v| v * s).collect();
    let m = x.len();

    let mut pi_x = Matrix::filled(m, m, s);
    let mut pi_y = initial_aux_plan(&problem.cost, problem.epsilon);
    pi_y.as_mut_slice().iter_mut().for_each(|v| *v *= s);

    let mut trace = ConvergenceTrace::default();
    let mut costs = Vec::new();
    let mut plans = Vec::new();
    let mut cost = f64::NAN;
    for _ in 0..stop.max_cycles {
        scale_cols(&mut pi_x, &nu)?;
        mean_gis_step(&mut pi_x, &mut pi_y, &problem.ax, &problem.ay, &b)?;
        scale_rows(&mut pi_x, &mu)?;
        scale_rows(&mut pi_y, &mu)?;

        let mx = row_means(&pi_x, &mu, &x)?;
        let violations = vec![
            sup_norm_diff(&pi_x.row_sums(), &mu) / s,
            sup_norm_diff(&pi_x.col_sums(), &nu) / s,
            sup_norm_diff(&pi_y.row_sums(), &mu) / s,
            sup_norm_diff(&pi_x.matvec(&x)?, &pi_y.matvec(&problem.y)?) / s,
        ];
        let new_cost = cost_at_means(problem.mu.weights(), &x, &mx, problem.cost_fn);
        let change = (new_cost - cost).abs();
        cost = new_cost;
        costs.push(cost);
        let record = CycleRecord {
            violations,
            kl_residuals: Vec::new(),
            kl_to_reference: None,
            mass: pi_x.as_slice().iter().sum(),
            elapsed: None,
        };
        let done = match opts.stop_kind {
            WeakStopKind::Violation => record.max_violation() <= stop.tol,
            WeakStopKind::CostChange => change < stop.tol,
        };
        trace.cycles.push(record);
        if opts.record_plans {
            plans.push((pi_x.clone(), pi_y.clone()));
        }
        if done {
            trace.converged = true;
            break;
        }
    }
    let means = row_means(&pi_x, &mu, &x)?;
    Ok(WeakSolution {
        pi_x: CouplingPlan::from_matrix_unchecked(pi_x),
        pi_y: CouplingPlan::from_matrix_unchecked(pi_y),
        means,
        weak_cost: cost,
        trace,
        costs,
        plans,
    })
}

/// The curtain measures with `Y = X`, squared cost and the given `ε`.
pub fn curtain_weak_fixture(epsilon: f64) -> Result<WeakProblem> {
    let (mu, nu) = crate::martingale::curtain_measures(100, 10)?;
    let y = mu.coords().expect("grid").to_vec();
    WeakProblem::new(mu, nu, y, squared, epsilon)
}
