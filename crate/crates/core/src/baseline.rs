//! Balanced entropic OT in scaling form: Sinkhorn, and the variant that treats
//! both marginal constraints as one stacked GIS block.
//!
//! Both keep `π = diag(u) K diag(v)` implicit. With `record_fejer` switched on
//! the solvers also track `KL(μνᵀ, π)` up to an additive constant, which is
//! enough to audit the per-step KL decrease against its lower bound.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::gis::StopRule;
use crate::kernel::KernelOperator;
use crate::kl::kl_divergence;
use crate::math::{ln, powf};
use crate::matrix::{CouplingPlan, Matrix};

/// Scalings `u`, `v` with `π = diag(u) K diag(v)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingSolution {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed cycles: `(u, v)` pairs for Sinkhorn, simultaneous updates otherwise.
    pub cycles: usize,
    pub converged: bool,
    /// Marginal sup-norm violation at termination.
    pub violation: f64,
    /// Per-step Fejér slack (decrease minus guaranteed decrease), when recorded.
    /// For stacked exponents other than `½` the guaranteed decrease is taken as zero.
    pub fejer_slacks: Vec<f64>,
}

impl ScalingSolution {
    /// Materializes `diag(u) K diag(v)`.
    pub fn plan<K: KernelOperator + ?Sized>(&self, kernel: &K) -> CouplingPlan {
        let mut k = kernel.to_dense();
        for i in 0..k.rows() {
            let ui = self.u[i];
            for (kij, vj) in k.row_mut(i).iter_mut().zip(&self.v) {
                *kij *= ui * vj;
            }
        }
        CouplingPlan::from_matrix_unchecked(k)
    }

    pub fn min_fejer_slack(&self) -> f64 {
        self.fejer_slacks
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solver switches shared by both algorithms.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineOptions {
    pub record_fejer: bool,
}

/// `KL(μνᵀ, π) − const = −μᵀlog u − νᵀlog v + uᵀKv`.
struct FejerTracker<'a> {
    mu: &'a [f64],
    nu: &'a [f64],
    last: Option<f64>,
    slacks: Vec<f64>,
}

impl<'a> FejerTracker<'a> {
    fn value(&self, u: &[f64], v: &[f64], mass: f64) -> f64 {
        let lu: f64 = self.mu.iter().zip(u).map(|(m, x)| m * ln(*x)).sum();
        let lv: f64 = self.nu.iter().zip(v).map(|(n, x)| n * ln(*x)).sum();
        mass - lu - lv
    }

    /// Records the step from the previous state to `(u, v)` with guaranteed decrease `bound`.
    fn step(&mut self, before: f64, after: f64, bound: f64) {
        self.slacks.push((before - after) - bound);
        self.last = Some(after);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_diff_prod(a: &[f64], b: &[f64], target: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(target)
        .map(|((x, y), t)| (x * y - t).abs())
        .fold(0.0, f64::max)
}

fn check_marginals<K: KernelOperator + ?Sized>(mu: &[f64], nu: &[f64], kernel: &K) -> Result<()> {
    check_len(kernel.rows(), mu.len())?;
    check_len(kernel.cols(), nu.len())?;
    if mu.iter().chain(nu).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(
            "marginals must be strictly positive".into(),
        ));
    }
    Ok(())
}

fn ratio(target: &[f64], den: &[f64]) -> Result<Vec<f64>> {
    target
        .iter()
        .zip(den)
        .enumerate()
        .map(|(i, (t, d))| {
            if *d > 0.0 {
                Ok(t / d)
            } else {
                Err(Error::Underflow { index: i })
            }
        })
        .collect()
}

/// Alternating row and column scaling until the row marginal is within
/// `stop.tol` (the column marginal is exact after every cycle).
pub fn sinkhorn<K: KernelOperator + ?Sized>(
    mu: &[f64],
    nu: &[f64],
    kernel: &K,
    stop: &StopRule,
) -> Result<ScalingSolution> {
    sinkhorn_with(mu, nu, kernel, stop, BaselineOptions::default())
}

pub fn sinkhorn_with<K: KernelOperator + ?Sized>(
    mu: &[f64],
    nu: &[f64],
    kernel: &K,
    stop: &StopRule,
    opts: BaselineOptions,
) -> Result<ScalingSolution> {
    stop.validate()?;
    check_marginals(mu, nu, kernel)?;
    let mut u = vec![1.0; mu.len()];
    let mut v = vec![1.0; nu.len()];
    let mut kv = kernel.apply(&v)?;
    let mut tracker = FejerTracker {
        mu,
        nu,
        last: None,
        slacks: Vec::new(),
    };
    if opts.record_fejer {
        tracker.last = Some(tracker.value(&u, &v, dot(&u, &kv)));
    }
    let mut violation = f64::INFINITY;
    let mut cycles = 0;
    while cycles < stop.max_cycles {
        cycles += 1;
        let row_kl = if opts.record_fejer {
            let row: Vec<f64> = u.iter().zip(&kv).map(|(a, b)| a * b).collect();
            kl_divergence(mu, &row)?
        } else {
            0.0
        };
        u = ratio(mu, &kv)?;
        let ktu = kernel.apply_transpose(&u)?;
        if let Some(before) = tracker.last.filter(|_| opts.record_fejer) {
            let after = tracker.value(&u, &v, dot(&u, &kv));
            tracker.step(before, after, row_kl);
            let col: Vec<f64> = v.iter().zip(&ktu).map(|(a, b)| a * b).collect();
            let col_kl = kl_divergence(nu, &col)?;
            let v_new = ratio(nu, &ktu)?;
            let after2 = tracker.value(&u, &v_new, dot(&v_new, &ktu));
            tracker.step(after, after2, col_kl);
            v = v_new;
        } else {
            v = ratio(nu, &ktu)?;
        }
        kv = kernel.apply(&v)?;
        violation = sup_diff_prod(&u, &kv, mu);
        if violation <= stop.tol {
            break;
        }
    }
    Ok(ScalingSolution {
        u,
        v,
        cycles,
        converged: violation <= stop.tol,
        violation,
        fejer_slacks: tracker.slacks,
    })
}

/// Simultaneous update `u ← u (μ/(u⊙Kv))^θ`, `v ← v (ν/(v⊙Kᵀu))^θ`.
///
/// With `θ = ½` this is one GIS step on the stacked, normalized marginal
/// system. `θ` must lie strictly between 0 and 1; the full step `θ = 1`
/// oscillates and is rejected.
pub fn stacked_gis_sinkhorn<K: KernelOperator + ?Sized>(
    mu: &[f64],
    nu: &[f64],
    kernel: &K,
    exponent: f64,
    stop: &StopRule,
) -> Result<ScalingSolution> {
    stacked_gis_sinkhorn_with(mu, nu, kernel, exponent, stop, BaselineOptions::default())
}

pub fn stacked_gis_sinkhorn_with<K: KernelOperator + ?Sized>(
    mu: &[f64],
    nu: &[f64],
    kernel: &K,
    exponent: f64,
    stop: &StopRule,
    opts: BaselineOptions,
) -> Result<ScalingSolution> {
    stop.validate()?;
    if !(exponent > 0.0 && exponent < 1.0) {
        return Err(Error::InvalidInput(
            "stacked GIS exponent must lie in (0, 1)".into(),
        ));
    }
    check_marginals(mu, nu, kernel)?;
    let mut u = vec![1.0; mu.len()];
    let mut v = vec![1.0; nu.len()];
    let mut kv = kernel.apply(&v)?;
    let mut ktu = kernel.apply_transpose(&u)?;
    let mut tracker = FejerTracker {
        mu,
        nu,
        last: None,
        slacks: Vec::new(),
    };
    if opts.record_fejer {
        tracker.last = Some(tracker.value(&u, &v, dot(&u, &kv)));
    }
    let mut violation = f64::INFINITY;
    let mut cycles = 0;
    while cycles < stop.max_cycles {
        cycles += 1;
        let row: Vec<f64> = u.iter().zip(&kv).map(|(a, b)| a * b).collect();
        let col: Vec<f64> = v.iter().zip(&ktu).map(|(a, b)| a * b).collect();
        // only the θ = ½ update is a GIS step with a guaranteed decrease;
        // other exponents are checked for monotonicity alone
        let bound = if opts.record_fejer && exponent == 0.5 {
            0.5 * (kl_divergence(mu, &row)? + kl_divergence(nu, &col)?)
        } else {
            0.0
        };
        let fu = ratio(mu, &row)?;
        let fv = ratio(nu, &col)?;
        u.iter_mut()
            .zip(&fu)
            .for_each(|(x, f)| *x *= powf(*f, exponent));
        v.iter_mut()
            .zip(&fv)
            .for_each(|(x, f)| *x *= powf(*f, exponent));
        kv = kernel.apply(&v)?;
        ktu = kernel.apply_transpose(&u)?;
        if let Some(before) = tracker.last.filter(|_| opts.record_fejer) {
            let after = tracker.value(&u, &v, dot(&u, &kv));
            tracker.step(before, after, bound);
        }
        violation = sup_diff_prod(&u, &kv, mu).max(sup_diff_prod(&v, &ktu, nu));
        if violation <= stop.tol {
            break;
        }
    }
    Ok(ScalingSolution {
        u,
        v,
        cycles,
        converged: violation <= stop.tol,
        violation,
        fejer_slacks: tracker.slacks,
    })
}

/// Marginal constraints of an `M×N` plan flattened row-major, as two
/// zero/one blocks (rows sum to `μ`, columns sum to `ν`).
pub fn marginal_blocks(mu: &[f64], nu: &[f64]) -> (Matrix, Matrix) {
    let (m, n) = (mu.len(), nu.len());
    let rows = Matrix::from_fn(m, m * n, |i, c| if c / n == i { 1.0 } else { 0.0 });
    let cols = Matrix::from_fn(n, m * n, |j, c| if c % n == j { 1.0 } else { 0.0 });
    (rows, cols)
}
