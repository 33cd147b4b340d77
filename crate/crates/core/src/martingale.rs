//! Entropic martingale OT on a sorted one-dimensional grid, plus the convex
//! order test that decides whether a martingale coupling exists at all.
//!
//! Every row of the plan has to satisfy `Σⱼ πᵢⱼ xⱼ = μᵢ xᵢ`. After the usual
//! shift and scale `x ↦ (x − ξ)/ξ'` this becomes, per row, a two-row
//! column-stochastic system with matrix `A = [x̂; 1 − x̂]` and target
//! `μᵢ A₌,ᵢ`. The rows decouple, so a single pass over the plan performs one
//! GIS step for all of them at once. Running it right before the `μ`
//! scaling lets the factor `μᵢ` drop out of the target.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::gis::StopRule;
use crate::kernel::{equidistant_spacing, DenseKernel, KernelOperator};
use crate::math::{exp, ln, round, sup_norm_diff};
use crate::matrix::{CouplingPlan, Histogram, Matrix};
use crate::trace::{ConvergenceTrace, CycleRecord};

const ORDER_TOL: f64 = 1e-12;

/// Integrals `G(y) = ∫₀ʸ (F_μ⁻¹ − F_ν⁻¹)` at every breakpoint of either
/// quantile function.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvexOrderCert {
    pub breakpoints: Vec<f64>,
    pub integrals: Vec<f64>,
    pub min: f64,
    pub endpoint: f64,
}

impl ConvexOrderCert {
    /// `μ ⪯ ν`: the integrals never go negative and vanish at `y = 1`.
    pub fn holds(&self) -> bool {
        self.min >= -ORDER_TOL && self.endpoint.abs() <= ORDER_TOL
    }
}

/// Exact convex-order certificate for two histograms on a common grid.
///
/// Both quantile functions are step functions, so `G` is piecewise linear
/// between the merged cumulative-mass breakpoints and its extremes sit on them.
pub fn check_convex_order(mu: &Histogram, nu: &Histogram) -> Result<ConvexOrderCert> {
    let x = common_grid(mu, nu)?;
    let (mw, nw) = (mu.weights(), nu.weights());
    let (sm, sn) = (mu.total_mass(), nu.total_mass());
    if (sm - sn).abs() > 1e-12 * sm.max(1.0) || !(sm > 0.0) {
        return Err(Error::InvalidInput(alloc::format!(
            "convex order needs equal positive masses, got {sm} and {sn}"
        )));
    }
    let cumulative = |w: &[f64], total: f64| -> Vec<f64> {
        let mut acc = 0.0;
        w.iter()
            .map(|v| {
                acc += v / total;
                acc
            })
            .collect()
    };
    let (cm, cn) = (cumulative(mw, sm), cumulative(nw, sn));
    let last = x.len() - 1;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut y, mut g, mut min) = (0.0f64, 0.0f64, 0.0f64);
    let mut breakpoints = Vec::new();
    let mut integrals = Vec::new();
    while y < 1.0 {
        // on (y, next] both quantiles are constant: F_μ⁻¹ = xᵢ, F_ν⁻¹ = xⱼ
        while i < last && cm[i] <= y {
            i += 1;
        }
        while j < last && cn[j] <= y {
            j += 1;
        }
        let next_m = if i == last { 1.0 } else { cm[i].min(1.0) };
        let next_n = if j == last { 1.0 } else { cn[j].min(1.0) };
        let next = next_m.min(next_n);
        g += (next - y) * (x[i] - x[j]);
        y = next;
        breakpoints.push(y);
        integrals.push(g);
        min = min.min(g);
    }
    Ok(ConvexOrderCert {
        breakpoints,
        integrals,
        min,
        endpoint: g,
    })
}

fn common_grid<'a>(mu: &'a Histogram, nu: &Histogram) -> Result<&'a [f64]> {
    let x = mu
        .coords()
        .ok_or_else(|| Error::InvalidInput("histograms need grid coordinates".into()))?;
    let y = nu
        .coords()
        .ok_or_else(|| Error::InvalidInput("histograms need grid coordinates".into()))?;
    check_len(x.len(), y.len())?;
    if x.iter().zip(y).any(|(a, b)| a != b) {
        return Err(Error::InvalidInput("histograms must share one grid".into()));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("empty grid".into()));
    }
    Ok(x)
}

/// Result of [`shifted_mixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedMixture {
    pub nu: Histogram,
    /// Mass that left the grid before renormalization.
    pub lost_mass: f64,
    pub truncated: bool,
}

/// `ν = ½((T₋ₛ)#μ + (Tₜ)#μ)` on the grid of `μ`, renormalized to unit mass.
///
/// Shifts must be whole multiples of the grid spacing. Mass pushed past either
/// end of the grid is dropped before renormalizing, and `truncated` is set.
pub fn shifted_mixture(mu: &Histogram, s: f64, t: f64) -> Result<ShiftedMixture> {
    let x = mu
        .coords()
        .ok_or_else(|| Error::InvalidInput("shifted mixture needs grid coordinates".into()))?;
    let steps = |shift: f64| -> Result<usize> {
        if shift == 0.0 {
            return Ok(0);
        }
        if !(shift > 0.0) {
            return Err(Error::InvalidShift(shift));
        }
        let h = equidistant_spacing(x, 1e-12).ok_or(Error::InvalidShift(shift))?;
        let k = round(shift / h);
        if (k * h - shift).abs() > 1e-9 * h {
            return Err(Error::InvalidShift(shift));
        }
        Ok(k as usize)
    };
    let (ks, kt) = (steps(s)?, steps(t)?);
    let w = mu.weights();
    let n = w.len();
    let mut nu = vec![0.0; n];
    let mut lost = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        let half = 0.5 * wi;
        if i >= ks {
            nu[i - ks] += half;
        } else {
            lost += half;
        }
        if i + kt < n {
            nu[i + kt] += half;
        } else {
            lost += half;
        }
    }
    let nu = Histogram::on_grid(nu, x.to_vec())?.normalized()?;
    Ok(ShiftedMixture {
        nu,
        lost_mass: lost,
        truncated: lost > 0.0,
    })
}

/// Normalized two-row martingale matrix `[x̂; 1 − x̂]`, `x̂ = (x − min x)/(max x − min x)`.
pub fn martingale_matrix(x: &[f64]) -> Result<Matrix> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::InvalidInput(
            "martingale grid needs two distinct points".into(),
        ));
    }
    let xh: Vec<f64> = x.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let comp: Vec<f64> = xh.iter().map(|v| 1.0 - v).collect();
    Matrix::from_rows(&[xh, comp])
}

#[derive(Debug, Clone)]
pub struct MartingaleProblem {
    mu: Histogram,
    nu: Histogram,
    kernel: DenseKernel,
    a: Matrix,
    certificate: ConvexOrderCert,
}

impl MartingaleProblem {
    /// Refuses measures that are not in convex order.
    pub fn new(mu: Histogram, nu: Histogram, kernel: DenseKernel) -> Result<Self> {
        let p = Self::new_unchecked(mu, nu, kernel)?;
        if !p.certificate.holds() {
            return Err(Error::NotInConvexOrder {
                min: p.certificate.min,
                endpoint: p.certificate.endpoint,
            });
        }
        Ok(p)
    }

    /// Skips the convex-order refusal (the certificate is still computed).
    pub fn new_unchecked(mu: Histogram, nu: Histogram, kernel: DenseKernel) -> Result<Self> {
        let certificate = check_convex_order(&mu, &nu)?;
        let x = common_grid(&mu, &nu)?;
        check_len(x.len(), kernel.rows())?;
        check_len(x.len(), kernel.cols())?;
        let a = martingale_matrix(x)?;
        Ok(Self {
            mu,
            nu,
            kernel,
            a,
            certificate,
        })
    }

    pub fn mu(&self) -> &Histogram {
        &self.mu
    }

    pub fn nu(&self) -> &Histogram {
        &self.nu
    }

    pub fn grid(&self) -> &[f64] {
        self.mu.coords().expect("grid checked at construction")
    }

    pub fn kernel(&self) -> &DenseKernel {
        &self.kernel
    }

    pub fn certificate(&self) -> &ConvexOrderCert {
        &self.certificate
    }

    pub fn constraint_matrix(&self) -> &Matrix {
        &self.a
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MartingaleOptions {
    /// Keep the factor `μᵢ` in the row targets instead of letting the
    /// following `μ` scaling absorb it.
    pub explicit_mu_factor: bool,
    /// Store the plan after every cycle.
    pub record_plans: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleSolution {
    pub plan: CouplingPlan,
    /// Violations per cycle: `[row marginal, column marginal, martingale]`.
    pub trace: ConvergenceTrace,
    pub plans: Vec<Matrix>,
}

impl MartingaleSolution {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// One simultaneous GIS step on every row's martingale constraint.
///
/// Row `i` targets `wᵢ A₌,ᵢ` with `wᵢ = μᵢ` when `mu` is given and `wᵢ = 1`
/// otherwise. Rows whose weight is zero are left alone.
pub fn martingale_gis_update(pi: &mut Matrix, a: &Matrix, mu: Option<&[f64]>) -> Result<()> {
    check_len(2, a.rows())?;
    check_len(a.cols(), pi.cols())?;
    let (a0, a1) = (a.row(0), a.row(1));
    for i in 0..pi.rows() {
        let w = match mu {
            Some(m) => m[i],
            None => 1.0,
        };
        if w == 0.0 {
            continue;
        }
        let row = pi.row_mut(i);
        let s0: f64 = row.iter().zip(a0).map(|(p, a)| p * a).sum();
        let s1: f64 = row.iter().zip(a1).map(|(p, a)| p * a).sum();
        let t = [w * a0[i], w * a1[i]];
        let s = [s0, s1];
        let mut l = [0.0; 2];
        let mut kill = [false; 2];
        for r in 0..2 {
            if t[r] > 0.0 {
                if !(s[r] > 0.0) {
                    return Err(Error::Infeasible {
                        row: i,
                        target: t[r],
                    });
                }
                l[r] = ln(t[r] / s[r]);
            } else if s[r] > 0.0 {
                kill[r] = true;
            }
        }
        for (j, p) in row.iter_mut().enumerate() {
            if (kill[0] && a0[j] != 0.0) || (kill[1] && a1[j] != 0.0) {
                *p = 0.0;
            } else {
                *p *= exp(a0[j] * l[0] + a1[j] * l[1]);
            }
        }
    }
    Ok(())
}

/// `Σⱼ πᵢⱼ xⱼ − μᵢ xᵢ` per row.
pub fn martingale_residual(pi: &Matrix, x: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    check_len(pi.rows(), mu.len())?;
    let px = pi.matvec(x)?;
    Ok(px
        .iter()
        .zip(mu.iter().zip(x))
        .map(|(p, (m, xi))| p - m * xi)
        .collect())
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

pub fn solve(problem: &MartingaleProblem, stop: &StopRule) -> Result<MartingaleSolution> {
    solve_with(problem, stop, MartingaleOptions::default())
}

/// Cycles `ν` scaling, the simultaneous martingale GIS step and `μ` scaling,
/// starting from `π = K`.
pub fn solve_with(
    problem: &MartingaleProblem,
    stop: &StopRule,
    opts: MartingaleOptions,
) -> Result<MartingaleSolution> {
    stop.validate()?;
    let mu = problem.mu.weights();
    let nu = problem.nu.weights();
    let x = problem.grid();
    let mut pi = problem.kernel.to_dense();
    let mut trace = ConvergenceTrace::default();
    let mut plans = Vec::new();
    for _ in 0..stop.max_cycles {
        scale_cols(&mut pi, nu)?;
        martingale_gis_update(&mut pi, &problem.a, opts.explicit_mu_factor.then_some(mu))?;
        scale_rows(&mut pi, mu)?;
        let row = sup_norm_diff(&pi.row_sums(), mu);
        let col = sup_norm_diff(&pi.col_sums(), nu);
        let mart = martingale_residual(&pi, x, mu)?
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        trace.cycles.push(CycleRecord {
            violations: vec![row, col, mart],
            kl_residuals: Vec::new(),
            kl_to_reference: None,
            mass: pi.as_slice().iter().sum(),
            elapsed: None,
        });
        if opts.record_plans {
            plans.push(pi.clone());
        }
        if row.max(col).max(mart) <= stop.tol {
            trace.converged = true;
            break;
        }
    }
    Ok(MartingaleSolution {
        plan: CouplingPlan::from_matrix_unchecked(pi),
        trace,
        plans,
    })
}

/// Number of contiguous runs of entries at or above `rel · max(row)`.
pub fn support_clusters(row: &[f64], rel: f64) -> usize {
    let peak = row.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return 0;
    }
    let cut = rel * peak;
    let mut count = 0;
    let mut inside = false;
    for &v in row {
        let on = v >= cut;
        if on && !inside {
            count += 1;
        }
        inside = on;
    }
    count
}

/// Grid, `μ ~ N(0, 0.2²)` sampled on 100 points of `[−1, 1]`, the shifted
/// mixture `ν` with `s = t = 10` grid steps, and the kernel of `c = exp(y − x)`
/// at `ε = 0.002`.
pub fn curtain_fixture() -> Result<MartingaleProblem> {
    curtain_fixture_with(100, 10, 0.002)
}

pub fn curtain_fixture_with(
    m: usize,
    shift_steps: usize,
    epsilon: f64,
) -> Result<MartingaleProblem> {
    let (mu, nu) = curtain_measures(m, shift_steps)?;
    let x = mu.coords().expect("grid").to_vec();
    let cost = crate::kernel::cost_matrix(&x, &x, |a, b| exp(b - a));
    let kernel = DenseKernel::from_cost(&cost, epsilon)?;
    MartingaleProblem::new(mu, nu, kernel)
}

/// The measures of [`curtain_fixture_with`] without the kernel.
pub fn curtain_measures(m: usize, shift_steps: usize) -> Result<(Histogram, Histogram)> {
    if m < 3 {
        return Err(Error::InvalidInput(
            "curtain grid needs at least 3 points".into(),
        ));
    }
    let x: Vec<f64> = (0..m)
        .map(|i| -1.0 + 2.0 * i as f64 / (m - 1) as f64)
        .collect();
    let w = crate::moment::sampled_gaussian(&x, 0.0, 0.2);
    let mu = Histogram::on_grid(w, x.clone())?;
    let h = 2.0 / (m - 1) as f64;
    let shift = shift_steps as f64 * h;
    let nu = shifted_mixture(&mu, shift, shift)?.nu;
    Ok((mu, nu))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(w: &[f64], x: &[f64]) -> Histogram {
        Histogram::on_grid(w.to_vec(), x.to_vec()).unwrap()
    }

    #[test]
    fn reflexive_and_spread_orders() {
        let x = [-1.0, 0.0, 1.0];
        let mu = hist(&[0.2, 0.5, 0.3], &x);
        let c = check_convex_order(&mu, &mu).unwrap();
        assert!(c.holds());
        assert!(c.integrals.iter().all(|g| g.abs() < 1e-15));

        let delta = hist(&[0.0, 1.0, 0.0], &x);
        let spread = hist(&[0.5, 0.0, 0.5], &x);
        assert!(check_convex_order(&delta, &spread).unwrap().holds());
        assert!(!check_convex_order(&spread, &delta).unwrap().holds());
    }

    #[test]
    fn mean_shift_breaks_the_order() {
        let x: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 * 0.05).collect();
        let mu = hist(&crate::moment::sampled_gaussian(&x, 0.0, 0.2), &x);
        let nu = hist(&crate::moment::sampled_gaussian(&x, 0.5, 0.2), &x);
        let c = check_convex_order(&mu, &nu).unwrap();
        assert!(!c.holds());
        assert!(c.endpoint.abs() > 0.1);
        let unequal = hist(&[1.0; 41], &x);
        assert!(check_convex_order(&mu, &unequal).is_err());
    }

    #[test]
    fn shifted_mixture_rules() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let mu = hist(&[0.0, 0.0, 0.1, 0.2, 0.2, 0.2, 0.2, 0.1, 0.0, 0.0, 0.0], &x);
        let same = shifted_mixture(&mu, 0.0, 0.0).unwrap();
        assert!(same
            .nu
            .weights()
            .iter()
            .zip(mu.weights())
            .all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(!same.truncated);
        let m = shifted_mixture(&mu, 0.2, 0.2).unwrap();
        assert!(!m.truncated);
        assert!(check_convex_order(&mu, &m.nu).unwrap().holds());
        assert!(
            !check_convex_order(&mu, &shifted_mixture(&mu, 0.1, 0.2).unwrap().nu)
                .unwrap()
                .holds()
        );
        assert!(matches!(
            shifted_mixture(&mu, 0.15, 0.15),
            Err(Error::InvalidShift(_))
        ));
        let far = shifted_mixture(&mu, 0.4, 0.4).unwrap();
        assert!(far.truncated && far.lost_mass > 0.0);
        assert!((far.nu.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residual_and_clusters() {
        let mu = [0.3, 0.7];
        let x = [0.0, 1.0];
        let diag = Matrix::from_rows(&[[0.3, 0.0], [0.0, 0.7]]).unwrap();
        assert_eq!(martingale_residual(&diag, &x, &mu).unwrap(), vec![0.0, 0.0]);
        let off = Matrix::from_rows(&[[0.0, 0.3], [0.7, 0.0]]).unwrap();
        assert!(martingale_residual(&off, &x, &mu)
            .unwrap()
            .iter()
            .any(|v| v.abs() > 0.1));
        assert_eq!(support_clusters(&[0.0, 1.0, 1.0, 0.0, 0.5, 0.0], 1e-4), 2);
        assert_eq!(support_clusters(&[0.0; 3], 1e-4), 0);
    }
}
