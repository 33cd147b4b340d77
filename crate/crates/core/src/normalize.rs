//! Rewriting an affine system `A x = b` on the simplex into the nonnegative,
//! column-stochastic, unit-sum form that GIS needs.
//!
//! Three steps, each of which leaves `{x ∈ Δ : A x = b}` unchanged:
//!
//! 1. subtract `ξ = min(min A, min b)` from every entry of `A` and `b`
//!    (valid because `1ᵀx = 1` on the simplex);
//! 2. divide by `ξ' = max(max column sum, Σ b)`;
//! 3. drop all-zero rows and append the complementary row `1 − 1ᵀA`, with
//!    right-hand side `1 − Σ b`.
//!
//! The complementary row is skipped when it is identically zero, which makes
//! the transformation idempotent.

use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

const ZERO_TOL: f64 = 1e-14;

/// Shift and scale used by [`normalize`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalizationParams {
    /// Shift subtracted from every entry of `A` and `b`.
    pub xi: f64,
    /// Scale dividing the shifted system.
    pub xi_prime: f64,
    /// Whether the complementary row was appended.
    pub appended_row: bool,
    /// Indices (into the input) of rows dropped because they vanished.
    pub removed_rows: Vec<usize>,
}

/// A system satisfying `A ≥ 0`, `b ≥ 0`, `1ᵀA = 1`, `1ᵀb = 1`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalizedSystem {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub params: NormalizationParams,
}

pub fn normalize(a: &Matrix, b: &[f64]) -> Result<NormalizedSystem> {
    normalize_with_margin(a, b, 0.0)
}

/// [`normalize`] with a deliberately loose shift and scale:
/// `ξ ← ξ − slack` and `ξ' ← ξ'·(1 + slack)`. The affine set is unchanged
/// but GIS steps on the result are shorter.
pub fn normalize_with_margin(a: &Matrix, b: &[f64], slack: f64) -> Result<NormalizedSystem> {
    check_len(a.rows(), b.len())?;
    if !(slack >= 0.0) {
        return Err(Error::InvalidInput(
            "normalization slack must be nonnegative".into(),
        ));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::InvalidInput("empty constraint system".into()));
    }
    let scale = a.max_entry().abs().max(a.min_entry().abs()).max(1.0);
    for (i, &bi) in b.iter().enumerate() {
        let row = a.row(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // a constant row reads `r · 1ᵀx = b` on the simplex
        if hi - lo <= ZERO_TOL * scale && (bi - lo).abs() > 1e-12 * scale {
            return Err(Error::StructurallyInfeasible { row: i });
        }
    }

    let min_b = b.iter().copied().fold(f64::INFINITY, f64::min);
    let xi = a.min_entry().min(min_b) - slack;

    let mut shifted = a.clone();
    // snap cancellation residue so it cannot set the scale ξ'
    let snap = |v: f64| if v.abs() <= ZERO_TOL * scale { 0.0 } else { v };
    shifted
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = snap(*v - xi));
    let mut rhs: Vec<f64> = b.iter().map(|v| snap(v - xi)).collect();

    let max_col = shifted.col_sums().into_iter().fold(0.0, f64::max);
    let sum_b: f64 = rhs.iter().sum();
    let mut xi_prime = max_col.max(sum_b) * (1.0 + slack);
    if !(xi_prime > 0.0) {
        xi_prime = 1.0;
    }
    shifted
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v /= xi_prime);
    rhs.iter_mut().for_each(|v| *v /= xi_prime);

    let mut kept_rows: Vec<Vec<f64>> = Vec::with_capacity(a.rows() + 1);
    let mut kept_b = Vec::with_capacity(a.rows() + 1);
    let mut removed_rows = Vec::new();
    for (i, &ri) in rhs.iter().enumerate() {
        let row = shifted.row(i);
        if row.iter().all(|v| v.abs() <= ZERO_TOL) && ri.abs() <= ZERO_TOL {
            removed_rows.push(i);
        } else {
            kept_rows.push(row.iter().map(|v| v.max(0.0)).collect());
            kept_b.push(ri.max(0.0));
        }
    }

    let cols = a.cols();
    let mut complement = alloc::vec![1.0; cols];
    for row in &kept_rows {
        for (c, v) in complement.iter_mut().zip(row) {
            *c -= v;
        }
    }
    complement.iter_mut().for_each(|c| {
        if *c < 0.0 {
            *c = 0.0;
        }
    });
    let comp_b = (1.0 - kept_b.iter().sum::<f64>()).max(0.0);
    let comp_zero = complement.iter().all(|c| *c <= ZERO_TOL);
    let appended_row = if comp_zero {
        if comp_b > 1e-12 {
            // every column already sums to one, so the rows force 1ᵀx = Σb < 1
            return Err(Error::StructurallyInfeasible { row: a.rows() });
        }
        false
    } else {
        kept_rows.push(complement);
        kept_b.push(comp_b);
        true
    };

    Ok(NormalizedSystem {
        a: Matrix::from_rows(&kept_rows)?,
        b: kept_b,
        params: NormalizationParams {
            xi,
            xi_prime,
            appended_row,
            removed_rows,
        },
    })
}

/// True iff every sample satisfies `A' x = b'` to `1e-12`.
///
/// Intended for checking that a rewritten system keeps the feasible points of
/// the original one; samples are expected to satisfy `A x = b`.
pub fn affine_set_equal_sample(
    a: &Matrix,
    b: &[f64],
    a_new: &Matrix,
    b_new: &[f64],
    samples: &[Vec<f64>],
) -> bool {
    let _ = (a, b);
    samples.iter().all(|x| match a_new.matvec(x) {
        Ok(ax) => ax.iter().zip(b_new).all(|(l, r)| (l - r).abs() <= 1e-12),
        Err(_) => false,
    })
}
