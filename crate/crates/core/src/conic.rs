//! Conic (mass-lifted) unbalanced OT.
//!
//! A histogram `μ ∈ ℝᴹ₊` is lifted to weights over pairs (location, number
//! of mass units). A coupling `πᵢₖⱼₗ` moves `k` units at location `i` into
//! `l` units at location `j`, and the unbalanced problem becomes a linear
//! program over the simplex with two families of mass-weighted marginal
//! constraints. Its entropic version is a KL projection solved by GIS.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::gis::{run_mixed_with, AffineBlock, BlockSchedule, StopRule, TraceOptions};
use crate::math::{ceil, exp, round};
use crate::matrix::Matrix;
use crate::trace::ConvergenceTrace;

/// Default cap on the number of lifted coupling entries `M·K·N·L`.
pub const DEFAULT_ENTRY_BUDGET: usize = 1_000_000;

/// Tolerance for deciding that a mass is a whole number of units.
pub const INTEGER_TOL: f64 = 1e-9;

/// Default penalty per created or destroyed unit in [`default_cost`].
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Dimensions of a lifted coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LiftedShape {
    pub m: usize,
    pub k_max: usize,
    pub n: usize,
    pub l_max: usize,
}

impl LiftedShape {
    pub fn len(&self) -> usize {
        self.m * self.k_max * self.n * self.l_max
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat position of `(i, k, j, l)` with one-based mass levels `k`, `l`.
    pub fn index(&self, i: usize, k: usize, j: usize, l: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.k_max && l >= 1 && l <= self.l_max);
        ((i * self.k_max + (k - 1)) * self.n + j) * self.l_max + (l - 1)
    }

    /// Inverse of [`LiftedShape::index`].
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize, usize) {
        let l = idx % self.l_max;
        let r = idx / self.l_max;
        let j = r % self.n;
        let r = r / self.n;
        let k = r % self.k_max;
        (r / self.k_max, k + 1, j, l + 1)
    }
}

/// Nonnegative lifted coupling.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConicCoupling {
    pub shape: LiftedShape,
    pub pi: Vec<f64>,
}

impl ConicCoupling {
    pub fn zeros(shape: LiftedShape) -> Self {
        Self {
            shape,
            pi: vec![0.0; shape.len()],
        }
    }

    pub fn get(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        self.pi[self.shape.index(i, k, j, l)]
    }

    /// `Σⱼₖₗ k·πᵢₖⱼₗ` per source location.
    pub fn source_mass(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.shape.m];
        for (idx, &p) in self.pi.iter().enumerate() {
            let (i, k, _, _) = self.shape.unflatten(idx);
            out[i] += k as f64 * p;
        }
        out
    }

    /// `Σᵢₖₗ l·πᵢₖⱼₗ` per target location.
    pub fn target_mass(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.shape.n];
        for (idx, &p) in self.pi.iter().enumerate() {
            let (_, _, j, l) = self.shape.unflatten(idx);
            out[j] += l as f64 * p;
        }
        out
    }

    /// Weights summed over mass levels, as an `M × N` matrix.
    pub fn location_plan(&self) -> Matrix {
        let mut out = Matrix::zeros(self.shape.m, self.shape.n);
        for (idx, &p) in self.pi.iter().enumerate() {
            let (i, _, j, _) = self.shape.unflatten(idx);
            out.set(i, j, out.get(i, j) + p);
        }
        out
    }

    /// Nonzero entries as `(i, k, j, l, value)`.
    pub fn nonzeros(&self) -> Vec<(usize, usize, usize, usize, f64)> {
        self.pi
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(|(idx, &p)| {
                let (i, k, j, l) = self.shape.unflatten(idx);
                (i, k, j, l, p)
            })
            .collect()
    }
}

/// Entropic conic problem with histograms already divided by the unit `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedProblem {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub unit: f64,
    pub shape: LiftedShape,
    /// Flat cost in [`LiftedShape::index`] order; `+∞` forbids an entry.
    pub cost: Vec<f64>,
    pub epsilon: f64,
}

/// Greatest unit `s` (up to `max_units` units of `‖μ‖₁`) that makes both
/// masses whole numbers of units within [`INTEGER_TOL`].
pub fn suggest_unit(mass_mu: f64, mass_nu: f64, max_units: usize) -> Option<f64> {
    if !(mass_mu > 0.0 && mass_nu > 0.0) {
        return None;
    }
    (1..=max_units)
        .map(|n| mass_mu / n as f64)
        .find(|&s| is_whole(mass_nu / s))
}

fn is_whole(v: f64) -> bool {
    (v - round(v)).abs() <= INTEGER_TOL * v.abs().max(1.0)
}

fn units(mass: f64, other: f64) -> Result<usize> {
    if !is_whole(mass) || round(mass) < 1.0 {
        return Err(Error::RequiresRounding {
            mass,
            suggested_unit: suggest_unit(mass, other, 10_000).unwrap_or(f64::NAN),
        });
    }
    Ok(round(mass) as usize)
}

/// `c = k·|xᵢ − yⱼ|² + λ·|k − l|`.
pub fn default_cost(x: &[f64], y: &[f64], shape: LiftedShape, lambda: f64) -> Result<Vec<f64>> {
    check_len(shape.m, x.len())?;
    check_len(shape.n, y.len())?;
    let mut c = vec![0.0; shape.len()];
    for (idx, v) in c.iter_mut().enumerate() {
        let (i, k, j, l) = shape.unflatten(idx);
        let d = x[i] - y[j];
        *v = k as f64 * d * d + lambda * (k as f64 - l as f64).abs();
    }
    Ok(c)
}

impl LiftedProblem {
    /// Divides `μ`, `ν` by `unit`. Missing cutoffs default to the rounded-up
    /// total masses in units.
    pub fn new(
        mu: &[f64],
        nu: &[f64],
        unit: f64,
        k_max: Option<usize>,
        l_max: Option<usize>,
        cost: impl Fn(LiftedShape) -> Result<Vec<f64>>,
        epsilon: f64,
    ) -> Result<Self> {
        Self::with_budget(
            mu,
            nu,
            unit,
            k_max,
            l_max,
            cost,
            epsilon,
            DEFAULT_ENTRY_BUDGET,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_budget(
        mu: &[f64],
        nu: &[f64],
        unit: f64,
        k_max: Option<usize>,
        l_max: Option<usize>,
        cost: impl Fn(LiftedShape) -> Result<Vec<f64>>,
        epsilon: f64,
        budget: usize,
    ) -> Result<Self> {
        if !(unit > 0.0) || !(epsilon > 0.0) {
            return Err(Error::InvalidInput(
                "unit and epsilon must be positive".into(),
            ));
        }
        if mu.is_empty() || nu.is_empty() {
            return Err(Error::InvalidInput("histograms must be nonempty".into()));
        }
        if mu.iter().chain(nu).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(
                "histograms must be nonnegative and finite".into(),
            ));
        }
        let mu: Vec<f64> = mu.iter().map(|v| v / unit).collect();
        let nu: Vec<f64> = nu.iter().map(|v| v / unit).collect();
        let k_max =
            k_max.unwrap_or_else(|| (ceil(mu.iter().sum::<f64>() - INTEGER_TOL) as usize).max(1));
        let l_max =
            l_max.unwrap_or_else(|| (ceil(nu.iter().sum::<f64>() - INTEGER_TOL) as usize).max(1));
        if k_max == 0 || l_max == 0 {
            return Err(Error::InvalidInput(
                "mass cutoffs must be at least 1".into(),
            ));
        }
        let over = |h: &[f64], cap: usize| h.iter().any(|v| *v > cap as f64 + INTEGER_TOL);
        if over(&mu, k_max) || over(&nu, l_max) {
            return Err(Error::InvalidInput(
                "a location carries more units than its cutoff".into(),
            ));
        }
        let shape = LiftedShape {
            m: mu.len(),
            k_max,
            n: nu.len(),
            l_max,
        };
        let entries = mu
            .len()
            .checked_mul(k_max)
            .and_then(|v| v.checked_mul(nu.len()))
            .and_then(|v| v.checked_mul(l_max))
            .unwrap_or(usize::MAX);
        if entries > budget {
            return Err(Error::TooLarge { entries, budget });
        }
        let cost = cost(shape)?;
        check_len(shape.len(), cost.len())?;
        if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
            return Err(Error::InvalidInput("costs must be finite or +∞".into()));
        }
        Ok(Self {
            mu,
            nu,
            unit,
            shape,
            cost,
            epsilon,
        })
    }

    /// `exp(−c/ε)`, zero where the cost is infinite.
    pub fn kernel(&self) -> Vec<f64> {
        self.cost.iter().map(|c| exp(-c / self.epsilon)).collect()
    }

    /// The `k`-weighted rows (one per source location).
    pub fn source_rows(&self) -> Matrix {
        let s = self.shape;
        let mut a = Matrix::zeros(s.m, s.len());
        for idx in 0..s.len() {
            let (i, k, _, _) = s.unflatten(idx);
            a.set(i, idx, k as f64);
        }
        a
    }

    /// The `l`-weighted rows (one per target location).
    pub fn target_rows(&self) -> Matrix {
        let s = self.shape;
        let mut a = Matrix::zeros(s.n, s.len());
        for idx in 0..s.len() {
            let (_, _, j, l) = s.unflatten(idx);
            a.set(j, idx, l as f64);
        }
        a
    }

    /// Both constraint families plus the unit-mass row, stacked.
    pub fn stacked_system(&self) -> Result<(Matrix, Vec<f64>)> {
        let ones = Matrix::filled(1, self.shape.len(), 1.0);
        let a = Matrix::vstack(&[&self.source_rows(), &self.target_rows(), &ones])?;
        let mut b = self.mu.clone();
        b.extend_from_slice(&self.nu);
        b.push(1.0);
        Ok((a, b))
    }
}

/// The product coupling supported on the total-mass levels.
pub fn feasible_init(problem: &LiftedProblem) -> Result<ConicCoupling> {
    let tm: f64 = problem.mu.iter().sum();
    let tn: f64 = problem.nu.iter().sum();
    let km = units(tm, tn)?;
    let ln_ = units(tn, tm)?;
    let s = problem.shape;
    if km > s.k_max || ln_ > s.l_max {
        return Err(Error::InvalidInput(
            "total mass exceeds the mass-level cutoff".into(),
        ));
    }
    let mut out = ConicCoupling::zeros(s);
    for (i, &mi) in problem.mu.iter().enumerate() {
        for (j, &nj) in problem.nu.iter().enumerate() {
            out.pi[s.index(i, km, j, ln_)] = (mi / tm) * (nj / tn);
        }
    }
    Ok(out)
}

/// `(k-weighted mass − μ, l-weighted mass − ν, Σπ − 1)`.
pub fn conic_residuals(
    pi: &ConicCoupling,
    mu: &[f64],
    nu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    check_len(pi.shape.m, mu.len())?;
    check_len(pi.shape.n, nu.len())?;
    let rs = pi
        .source_mass()
        .iter()
        .zip(mu)
        .map(|(a, b)| a - b)
        .collect();
    let rt = pi
        .target_mass()
        .iter()
        .zip(nu)
        .map(|(a, b)| a - b)
        .collect();
    Ok((rs, rt, pi.pi.iter().sum::<f64>() - 1.0))
}

/// How the constraint families enter the GIS schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConicLayout {
    /// One block holding every constraint.
    #[default]
    Stacked,
    /// Source and target families as two separate blocks.
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub coupling: ConicCoupling,
    pub trace: ConvergenceTrace,
}

impl ConicSolution {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

pub fn schedule(problem: &LiftedProblem, layout: ConicLayout) -> Result<BlockSchedule> {
    let blocks = match layout {
        ConicLayout::Stacked => {
            let (a, b) = problem.stacked_system()?;
            vec![AffineBlock::gis(a, b)?]
        }
        ConicLayout::Split => vec![
            AffineBlock::gis(problem.source_rows(), problem.mu.clone())?,
            AffineBlock::gis(problem.target_rows(), problem.nu.clone())?,
        ],
    };
    BlockSchedule::new(blocks)
}

pub fn solve(problem: &LiftedProblem, stop: &StopRule) -> Result<ConicSolution> {
    solve_with(
        problem,
        stop,
        ConicLayout::Stacked,
        &TraceOptions::default(),
    )
}

/// Minimizes `KL(π, exp(−c/ε))` over conic couplings.
pub fn solve_with(
    problem: &LiftedProblem,
    stop: &StopRule,
    layout: ConicLayout,
    opts: &TraceOptions,
) -> Result<ConicSolution> {
    // existence of a conic coupling is what makes the normalized system feasible
    feasible_init(problem)?;
    let sched = schedule(problem, layout)?;
    let sol = run_mixed_with(&problem.kernel(), &sched, stop, opts)?;
    Ok(ConicSolution {
        coupling: ConicCoupling {
            shape: problem.shape,
            pi: sol.p,
        },
        trace: sol.trace,
    })
}

/// Two units at the left end of `[0, 1]` spread into three units towards
/// the right, on four points.
pub fn conic_fixture() -> Result<(Vec<f64>, LiftedProblem)> {
    let x = vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
    let mu = [1.0, 1.0, 0.0, 0.0];
    let nu = [0.0, 0.0, 1.0, 2.0];
    let xc = x.clone();
    let p = LiftedProblem::new(
        &mu,
        &nu,
        1.0,
        None,
        None,
        |s| default_cost(&xc, &xc, s, DEFAULT_LAMBDA),
        0.05,
    )?;
    Ok((x, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cost(s: LiftedShape) -> Result<Vec<f64>> {
        Ok(vec![0.0; s.len()])
    }

    #[test]
    fn index_round_trip() {
        let s = LiftedShape {
            m: 3,
            k_max: 2,
            n: 4,
            l_max: 5,
        };
        for idx in 0..s.len() {
            let (i, k, j, l) = s.unflatten(idx);
            assert_eq!(s.index(i, k, j, l), idx);
        }
    }

    #[test]
    fn init_hand_example() {
        let p =
            LiftedProblem::new(&[1.0, 1.0], &[2.0], 1.0, Some(2), Some(2), zero_cost, 1.0).unwrap();
        let c = feasible_init(&p).unwrap();
        assert_eq!(c.get(0, 2, 0, 2), 0.5);
        assert_eq!(c.get(1, 2, 0, 2), 0.5);
        assert_eq!(c.pi.iter().sum::<f64>(), 1.0);
        let (rs, rt, r1) = conic_residuals(&c, &p.mu, &p.nu).unwrap();
        assert!(rs.iter().chain(&rt).all(|v| *v == 0.0) && r1 == 0.0);
    }

    #[test]
    fn init_single_site() {
        let p = LiftedProblem::new(&[1.0], &[1.0], 1.0, None, None, zero_cost, 1.0).unwrap();
        let c = feasible_init(&p).unwrap();
        assert_eq!(c.pi, vec![1.0]);
    }

    #[test]
    fn zero_coupling_residuals() {
        let p = LiftedProblem::new(&[1.0, 2.0], &[3.0], 1.0, None, None, zero_cost, 1.0).unwrap();
        let (rs, rt, r1) = conic_residuals(&ConicCoupling::zeros(p.shape), &p.mu, &p.nu).unwrap();
        assert_eq!((rs, rt, r1), (vec![-1.0, -2.0], vec![-3.0], -1.0));
    }

    #[test]
    fn fractional_mass_needs_rounding() {
        let p = LiftedProblem::new(&[0.5, 1.0], &[3.0], 1.0, None, None, zero_cost, 1.0).unwrap();
        match feasible_init(&p) {
            Err(Error::RequiresRounding { suggested_unit, .. }) => {
                assert!((suggested_unit - 1.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(suggest_unit(1.5, 3.0, 100), Some(1.5));
        assert_eq!(suggest_unit(1.0, 0.4, 100), Some(0.2));
    }

    #[test]
    fn budget_is_enforced() {
        let r = LiftedProblem::with_budget(
            &[5.0; 10], &[5.0; 10], 1.0, None, None, zero_cost, 1.0, 1000,
        );
        assert!(matches!(r, Err(Error::TooLarge { .. })));
    }

    #[test]
    fn fixture_solves() {
        let (_, p) = conic_fixture().unwrap();
        let sol = solve(&p, &StopRule::new(1e-9, 200_000).unwrap()).unwrap();
        assert!(sol.converged());
        let (rs, rt, r1) = conic_residuals(&sol.coupling, &p.mu, &p.nu).unwrap();
        assert!(rs.iter().chain(&rt).all(|v| v.abs() < 1e-8) && r1.abs() < 1e-8);
    }
}
