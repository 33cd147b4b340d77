//! Generalized KL divergence, entropy and the closed-form scaling projection.

use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::math::ln;
use crate::matrix::{CouplingPlan, Matrix};

/// `Σ pᵢ log(pᵢ/qᵢ) − pᵢ + qᵢ` with `0 log 0 = 0`.
///
/// Returns `+∞` if any entry is negative or if `p` puts mass where `q`
/// vanishes. Only a length mismatch is an error.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p.len(), q.len())?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi < 0.0 || qi < 0.0 {
            return Ok(f64::INFINITY);
        }
        if pi == 0.0 {
            acc += qi;
        } else if qi == 0.0 {
            return Ok(f64::INFINITY);
        } else {
            acc += pi * ln(pi / qi) - pi + qi;
        }
    }
    Ok(acc)
}

/// `E(π) = −Σ πᵢⱼ (log πᵢⱼ − 1)`.
pub fn entropy(pi: &CouplingPlan) -> f64 {
    -pi.entries()
        .as_slice()
        .iter()
        .filter(|v| **v > 0.0)
        .map(|&v| v * (ln(v) - 1.0))
        .sum::<f64>()
}

/// KL projection onto `{x : maskᵀx = b}`: masked entries are multiplied by
/// `b / maskᵀp`, the rest is left alone.
pub fn scaling_projection(p: &[f64], mask: &[bool], b: f64) -> Result<Vec<f64>> {
    let mut out = p.to_vec();
    scale_in_place(&mut out, mask, b)?;
    Ok(out)
}

pub(crate) fn scale_in_place(p: &mut [f64], mask: &[bool], b: f64) -> Result<()> {
    check_len(p.len(), mask.len())?;
    let mass: f64 = p
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .sum();
    if !(mass > 0.0) {
        if b > 0.0 {
            return Err(Error::InfeasibleScaling { target: b });
        }
        return Ok(());
    }
    let factor = b / mass;
    p.iter_mut()
        .zip(mask)
        .filter(|(_, m)| **m)
        .for_each(|(v, _)| *v *= factor);
    Ok(())
}

/// Row sums `π 1`.
pub fn marginal_row(pi: &CouplingPlan) -> Vec<f64> {
    pi.row_marginal()
}

/// Column sums `πᵀ 1`.
pub fn marginal_col(pi: &CouplingPlan) -> Vec<f64> {
    pi.col_marginal()
}

/// Entrywise `KL(p, q)` over two equally shaped matrices.
pub fn kl_matrix(p: &Matrix, q: &Matrix) -> Result<f64> {
    check_len(p.rows(), q.rows())?;
    kl_divergence(p.as_slice(), q.as_slice())
}
