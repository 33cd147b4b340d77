//! Reference KL projections by damped Newton on the dual.
//!
//! The projection of `q` onto `{p ∈ Δ : A p = b}` has the form
//! `p = q ⊙ exp(Aᵀλ)`, where `λ` minimizes the smooth, strictly convex
//! `f(λ) = Σ q exp(Aᵀλ) − λᵀb` once redundant rows are removed. This module is
//! slow and dense on purpose; it exists to check the iterative solvers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::gis::AffineBlock;
use crate::math::{exp, sqrt};
use crate::matrix::Matrix;

const RANK_TOL: f64 = 1e-10;
const ARMIJO: f64 = 1e-4;
const MAX_NEWTON: usize = 500;
/// Largest residual accepted when Newton can make no further progress.
const STALL_TOL: f64 = 1e-10;

/// Dual iterate at termination.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    /// One multiplier per independent (orthonormalized) constraint row.
    pub multipliers: Vec<f64>,
    /// `‖A p − b‖∞` in the reduced system.
    pub residual_norm: f64,
}

/// KL projection of `q` onto `{p ∈ Δ : A p = b}`.
pub fn project_affine(q: &[f64], a: &Matrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    project_affine_dual(q, a, b, tol).map(|(p, _)| p)
}

/// [`project_affine`] that also returns the dual state.
pub fn project_affine_dual(
    q: &[f64],
    a: &Matrix,
    b: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, DualState)> {
    check_len(a.cols(), q.len())?;
    check_len(a.rows(), b.len())?;
    if q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(
            "q must be nonnegative and finite".into(),
        ));
    }
    let keep: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput("q has no positive entry".into()));
    }
    let qk: Vec<f64> = keep.iter().map(|&j| q[j]).collect();
    let ak = a.select_cols(&keep);

    // the simplex row is always part of the system
    let mut rows: Vec<Vec<f64>> = (0..ak.rows()).map(|i| ak.row(i).to_vec()).collect();
    let mut rhs = b.to_vec();
    rows.push(vec![1.0; keep.len()]);
    rhs.push(1.0);
    let (basis, targets) = independent_rows(&rows, &rhs)?;

    let (pk, state) = newton(&qk, &basis, &targets, tol)?;
    let mut p = vec![0.0; q.len()];
    for (v, &j) in pk.into_iter().zip(&keep) {
        p[j] = v;
    }
    Ok((p, state))
}

/// KL projection onto the intersection of all blocks (their raw systems stacked).
pub fn project_intersection(q: &[f64], blocks: &[AffineBlock], tol: f64) -> Result<Vec<f64>> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidInput("no blocks to project onto".into()))?;
    let mats: Vec<&Matrix> = blocks.iter().map(|b| b.a()).collect();
    let a = Matrix::vstack(&mats)?;
    let b: Vec<f64> = blocks
        .iter()
        .flat_map(|bl| bl.b().iter().copied())
        .collect();
    check_len(first.cols(), q.len())?;
    project_affine(q, &a, &b, tol)
}

/// Orthonormal basis of the row space with matching right-hand sides.
///
/// Modified Gram–Schmidt with reorthogonalization; rows whose remainder falls
/// below `1e-10` of their norm are dropped after a consistency check.
fn independent_rows(rows: &[Vec<f64>], rhs: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for (row, &beta0) in rows.iter().zip(rhs) {
        let norm0 = norm(row);
        let mut r = row.clone();
        let mut beta = beta0;
        for _ in 0..2 {
            for (e, t) in basis.iter().zip(&targets) {
                let c = dot(&r, e);
                r.iter_mut().zip(e).for_each(|(x, y)| *x -= c * y);
                beta -= c * t;
            }
        }
        let n = norm(&r);
        if n <= RANK_TOL * norm0.max(1e-300) {
            let scale = beta0.abs().max(1.0);
            if beta.abs() > 1e-8 * scale {
                return Err(Error::Oracle(format!(
                    "inconsistent constraint system (dependent row off by {beta:e})"
                )));
            }
            continue;
        }
        r.iter_mut().for_each(|x| *x /= n);
        basis.push(r);
        targets.push(beta / n);
    }
    Ok((basis, targets))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

fn primal(q: &[f64], basis: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    q.iter()
        .enumerate()
        .map(|(j, &qj)| {
            let s: f64 = basis.iter().zip(lambda).map(|(r, l)| r[j] * l).sum();
            qj * exp(s)
        })
        .collect()
}

fn residual(basis: &[Vec<f64>], b: &[f64], p: &[f64]) -> f64 {
    basis
        .iter()
        .zip(b)
        .map(|(r, bi)| (dot(r, p) - bi).abs())
        .fold(0.0, f64::max)
}

fn dual_objective(p: &[f64], lambda: &[f64], b: &[f64]) -> f64 {
    p.iter().sum::<f64>() - dot(lambda, b)
}

fn newton(q: &[f64], basis: &[Vec<f64>], b: &[f64], tol: f64) -> Result<(Vec<f64>, DualState)> {
    let m = basis.len();
    let n = q.len();
    let mut lambda = vec![0.0; m];
    let mut p = primal(q, basis, &lambda);
    let mut f = dual_objective(&p, &lambda, b);
    for _ in 0..MAX_NEWTON {
        let g: Vec<f64> = basis.iter().zip(b).map(|(r, bi)| dot(r, &p) - bi).collect();
        let res = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if res <= tol {
            return Ok((
                p,
                DualState {
                    multipliers: lambda,
                    residual_norm: res,
                },
            ));
        }
        let h = DMatrix::from_fn(m, m, |i, k| {
            (0..n)
                .map(|j| basis[i][j] * p[j] * basis[k][j])
                .sum::<f64>()
        });
        let neg_g = DVector::from_iterator(m, g.iter().map(|v| -v));
        let d = match h.clone().cholesky() {
            Some(ch) => ch.solve(&neg_g),
            None => {
                let ridge = DMatrix::<f64>::identity(m, m) * (1e-12 * h.trace().max(1e-300));
                (h + ridge)
                    .cholesky()
                    .ok_or_else(|| Error::Oracle("singular Newton system".into()))?
                    .solve(&neg_g)
            }
        };
        let slope: f64 = g.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
        // Newton decrement at roundoff level: the residual cannot shrink further
        if -slope <= 1e-30 && res <= tol.max(STALL_TOL) {
            return Ok((
                p,
                DualState {
                    multipliers: lambda,
                    residual_norm: res,
                },
            ));
        }
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = lambda
                .iter()
                .zip(d.iter())
                .map(|(l, di)| l + t * di)
                .collect();
            let pt = primal(q, basis, &trial);
            let ft = dual_objective(&pt, &trial, b);
            let armijo = ft.is_finite() && ft <= f + ARMIJO * t * slope;
            // near the optimum f changes below its own roundoff; fall back to
            // accepting steps that shrink the gradient
            let flat = ft.is_finite() && (ft - f).abs() <= 64.0 * f64::EPSILON * f.abs().max(1.0);
            if armijo || (flat && residual(basis, b, &pt) < res) {
                lambda = trial;
                p = pt;
                f = ft;
                break;
            }
            t *= 0.5;
            if t < 1e-16 {
                if res <= tol.max(STALL_TOL) {
                    return Ok((
                        p,
                        DualState {
                            multipliers: lambda,
                            residual_norm: res,
                        },
                    ));
                }
                return Err(Error::Oracle(format!(
                    "line search stalled at residual {res:e}"
                )));
            }
        }
    }
    Err(Error::Oracle("Newton iteration budget exhausted".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kl::scaling_projection;
    use crate::math::ln;

    #[test]
    fn feasible_q_is_returned() {
        let a = Matrix::from_rows(&[[0.1, 0.5, 0.4]]).unwrap();
        let q = [0.05, 0.35, 0.6];
        let p = project_affine(&q, &a, &[0.42], 1e-14).unwrap();
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn mask_row_matches_scaling_projection() {
        // scaling keeps the total mass only when q is a probability vector
        let q = [0.2, 0.3, 0.5];
        let a = Matrix::from_rows(&[[1.0, 1.0, 0.0]]).unwrap();
        let p = project_affine(&q, &a, &[0.6], 1e-15).unwrap();
        let mask = [true, true, false];
        let s = scaling_projection(&q, &mask, 0.6).unwrap();
        let s = scaling_projection(&s, &[false, false, true], 0.4).unwrap();
        for (x, y) in p.iter().zip(&s) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_are_harmless() {
        let a = Matrix::from_rows(&[[0.1, 0.5, 0.4], [0.2, 1.0, 0.8], [1.0, 1.0, 1.0]]).unwrap();
        let q = [0.5, 0.1, 0.4];
        let p1 = project_affine(&q, &a, &[0.42, 0.84, 1.0], 1e-14).unwrap();
        let a1 = Matrix::from_rows(&[[0.1, 0.5, 0.4]]).unwrap();
        let p2 = project_affine(&q, &a1, &[0.42], 1e-14).unwrap();
        for (x, y) in p1.iter().zip(&p2) {
            assert!((x - y).abs() < 1e-13);
        }
        assert!(matches!(
            project_affine(&q, &a, &[0.42, 0.9, 1.0], 1e-14),
            Err(Error::Oracle(_))
        ));
    }

    #[test]
    fn first_order_conditions_hold() {
        let a = Matrix::from_rows(&[[0.1, 0.5, 0.4, 0.9], [1.0, 0.0, 2.0, 0.5]]).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let b = a.matvec(&x).unwrap();
        let q = [0.4, 0.3, 0.2, 0.1];
        let (p, state) = project_affine_dual(&q, &a, &b, 1e-14).unwrap();
        assert!(state.residual_norm <= 1e-14);
        // log(p/q) must lie in span{rows of A, 1}
        let rows = [a.row(0).to_vec(), a.row(1).to_vec(), vec![1.0; 4]];
        let (basis, _) = independent_rows(&rows, &[0.0, 0.0, 0.0]).unwrap();
        let mut r: Vec<f64> = p.iter().zip(&q).map(|(pi, qi)| ln(pi / qi)).collect();
        for e in &basis {
            let c = dot(&r, e);
            r.iter_mut().zip(e).for_each(|(x, y)| *x -= c * y);
        }
        assert!(norm(&r) < 1e-8);
    }
}
