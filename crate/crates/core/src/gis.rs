//! Block-iterative KL projection: explicit scaling steps for zero/one blocks,
//! generalized iterative scaling (GIS) steps for arbitrary affine blocks, and a
//! cyclic scheduler over both.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::kl::kl_divergence;
use crate::math::{exp, ln};
use crate::matrix::Matrix;
use crate::normalize::{normalize, normalize_with_margin, NormalizedSystem};
use crate::trace::{ConvergenceTrace, CycleRecord, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BlockKind {
    /// Disjoint zero/one rows, projected onto in closed form.
    ExplicitScaling,
    /// Any affine system; one GIS step per visit.
    Gis,
}

/// One constraint group `A p = b`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineBlock {
    a: Matrix,
    b: Vec<f64>,
    kind: BlockKind,
    normalized: Option<NormalizedSystem>,
    /// Column -> owning row, for scaling blocks.
    owner: Vec<Option<usize>>,
}

impl AffineBlock {
    /// A block of disjoint zero/one rows with nonnegative targets.
    pub fn scaling(a: Matrix, b: Vec<f64>) -> Result<Self> {
        check_len(a.rows(), b.len())?;
        if b.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput(
                "scaling targets must be nonnegative".into(),
            ));
        }
        let mut owner = vec![None; a.cols()];
        for i in 0..a.rows() {
            for (j, &v) in a.row(i).iter().enumerate() {
                if v == 1.0 {
                    if owner[j].is_some() {
                        return Err(Error::InvalidInput(
                            "scaling block rows must have disjoint supports".into(),
                        ));
                    }
                    owner[j] = Some(i);
                } else if v != 0.0 {
                    return Err(Error::InvalidInput(
                        "scaling block entries must be 0 or 1".into(),
                    ));
                }
            }
        }
        Ok(Self {
            a,
            b,
            kind: BlockKind::ExplicitScaling,
            normalized: None,
            owner,
        })
    }

    /// A general affine block, normalized up front.
    pub fn gis(a: Matrix, b: Vec<f64>) -> Result<Self> {
        let n = normalize(&a, &b)?;
        Ok(Self::gis_from_parts(a, b, n))
    }

    /// Like [`AffineBlock::gis`] with a deliberately loose normalization.
    pub fn gis_with_margin(a: Matrix, b: Vec<f64>, slack: f64) -> Result<Self> {
        let n = normalize_with_margin(&a, &b, slack)?;
        Ok(Self::gis_from_parts(a, b, n))
    }

    fn gis_from_parts(a: Matrix, b: Vec<f64>, normalized: NormalizedSystem) -> Self {
        Self {
            a,
            b,
            kind: BlockKind::Gis,
            normalized: Some(normalized),
            owner: Vec::new(),
        }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn normalized(&self) -> Option<&NormalizedSystem> {
        self.normalized.as_ref()
    }

    pub fn cols(&self) -> usize {
        self.a.cols()
    }

    /// The system the block iterates on: normalized for GIS blocks, raw otherwise.
    pub(crate) fn working_system(&self) -> (&Matrix, &[f64]) {
        match &self.normalized {
            Some(n) => (&n.a, &n.b),
            None => (&self.a, &self.b),
        }
    }

    /// Sup-norm of `A p − b` in the working system.
    ///
    /// For GIS blocks this is the normalized system, whose appended row also
    /// pins the total mass, so a zero value means `p` lies on the simplex.
    pub fn violation(&self, p: &[f64]) -> Result<f64> {
        let (a, b) = self.working_system();
        let ap = a.matvec(p)?;
        Ok(ap
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    /// Sup-norm of `A p − b` in the caller's original system.
    pub fn raw_violation(&self, p: &[f64]) -> Result<f64> {
        let ap = self.a.matvec(p)?;
        Ok(ap
            .iter()
            .zip(&self.b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    /// `KL(b, A p)` in the working system: the guaranteed KL decrease of one
    /// step toward any feasible point.
    pub fn kl_residual(&self, p: &[f64]) -> Result<f64> {
        let (a, b) = self.working_system();
        kl_divergence(b, &a.matvec(p)?)
    }

    /// Applies one step of this block in place.
    pub fn step(&self, p: &mut [f64]) -> Result<()> {
        match self.kind {
            BlockKind::ExplicitScaling => self.scale(p),
            BlockKind::Gis => {
                let n = self.normalized.as_ref().expect("GIS block is normalized");
                gis_step_in_place(p, &n.a, &n.b)
            }
        }
    }

    fn scale(&self, p: &mut [f64]) -> Result<()> {
        check_len(self.owner.len(), p.len())?;
        let mut mass = vec![0.0; self.b.len()];
        for (j, o) in self.owner.iter().enumerate() {
            if let Some(i) = o {
                mass[*i] += p[j];
            }
        }
        let mut factor = vec![0.0; self.b.len()];
        for (f, (&m, &t)) in factor.iter_mut().zip(mass.iter().zip(&self.b)) {
            if m > 0.0 {
                *f = t / m;
            } else if t > 0.0 {
                return Err(Error::InfeasibleScaling { target: t });
            }
        }
        for (j, o) in self.owner.iter().enumerate() {
            if let Some(i) = o {
                p[j] *= factor[*i];
            }
        }
        Ok(())
    }

    /// Restricts the block to the listed columns.
    fn restrict(&self, keep: &[usize]) -> Self {
        let normalized = self.normalized.as_ref().map(|n| NormalizedSystem {
            a: n.a.select_cols(keep),
            b: n.b.clone(),
            params: n.params.clone(),
        });
        Self {
            a: self.a.select_cols(keep),
            b: self.b.clone(),
            kind: self.kind,
            normalized,
            owner: if self.owner.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&j| self.owner[j]).collect()
            },
        }
    }
}

/// An ordered cycle of blocks `C¹, …, Cⁿ`, repeated periodically.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockSchedule {
    blocks: Vec<AffineBlock>,
}

impl BlockSchedule {
    pub fn new(blocks: Vec<AffineBlock>) -> Result<Self> {
        let cols = blocks
            .first()
            .ok_or_else(|| Error::InvalidInput("schedule needs at least one block".into()))?
            .cols();
        for b in &blocks {
            check_len(cols, b.cols())?;
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[AffineBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn cols(&self) -> usize {
        self.blocks[0].cols()
    }

    /// Positions of the GIS blocks.
    pub fn gis_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BlockKind::Gis)
            .map(|(i, _)| i)
            .collect()
    }

    /// Max violation over all blocks.
    pub fn violation(&self, p: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            worst = worst.max(b.violation(p)?);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StopRule {
    /// Sup-norm bound on every block violation.
    pub tol: f64,
    pub max_cycles: usize,
}

impl StopRule {
    pub fn new(tol: f64, max_cycles: usize) -> Result<Self> {
        let s = Self { tol, max_cycles };
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_cycles == 0 {
            return Err(Error::InvalidInput(
                "stop rule needs tol > 0 and max_cycles >= 1".into(),
            ));
        }
        Ok(())
    }
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_cycles: 50_000,
        }
    }
}

/// Optional instrumentation for [`run_mixed_with`].
#[derive(Debug, Clone, Default)]
pub struct TraceOptions {
    /// Store every intermediate iterate (needed by [`fejer_audit`]).
    pub record_iterates: bool,
    /// A feasible point; `KL(reference, p)` is logged once per cycle.
    pub reference: Option<Vec<f64>>,
    /// Monotone clock in seconds; elapsed time is logged when present.
    pub clock: Option<fn() -> f64>,
}

/// Result of [`run_mixed`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSolution {
    pub p: Vec<f64>,
    pub trace: ConvergenceTrace,
}

impl MixedSolution {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// One GIS step `p ⊙ exp(A'ᵀ log(b'/A'p))`.
///
/// Terms with `A'ᵢⱼ = 0` are skipped. A row with `b'ᵢ = 0` drives every
/// coordinate it touches to zero. For a single zero/one row this is exactly the
/// scaling projection.
pub fn gis_step(p: &[f64], a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let mut out = p.to_vec();
    gis_step_in_place(&mut out, a, b)?;
    Ok(out)
}

pub(crate) fn gis_step_in_place(p: &mut [f64], a: &Matrix, b: &[f64]) -> Result<()> {
    let f = gis_factors(p, a, b)?;
    p.iter_mut().zip(&f).for_each(|(x, y)| *x *= y);
    Ok(())
}

/// Multiplicative factors `exp(A'ᵀ log(b'/A'p))` of one GIS step, with zeros
/// for coordinates touched by a row whose target is zero.
pub(crate) fn gis_factors(p: &[f64], a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.rows(), b.len())?;
    let ap = a.matvec(p)?;
    let mut log_ratio = vec![0.0; b.len()];
    let mut kill = vec![false; b.len()];
    for (i, (&num, &den)) in b.iter().zip(&ap).enumerate() {
        if num > 0.0 {
            if !(den > 0.0) {
                return Err(Error::Infeasible {
                    row: i,
                    target: num,
                });
            }
            log_ratio[i] = ln(num / den);
        } else if den > 0.0 {
            kill[i] = true;
        }
    }
    let mut exponent = vec![0.0; p.len()];
    let mut zero = vec![false; p.len()];
    for i in 0..a.rows() {
        for (j, &aij) in a.row(i).iter().enumerate() {
            if aij != 0.0 {
                if kill[i] {
                    zero[j] = true;
                } else {
                    exponent[j] += aij * log_ratio[i];
                }
            }
        }
    }
    Ok(exponent
        .iter()
        .zip(&zero)
        .map(|(e, z)| if *z { 0.0 } else { exp(*e) })
        .collect())
}

/// Runs the cyclic schedule from `q` until every block violation is at most
/// `stop.tol` or `stop.max_cycles` cycles have passed.
pub fn run_mixed(q: &[f64], schedule: &BlockSchedule, stop: &StopRule) -> Result<MixedSolution> {
    run_mixed_with(q, schedule, stop, &TraceOptions::default())
}

pub fn run_mixed_with(
    q: &[f64],
    schedule: &BlockSchedule,
    stop: &StopRule,
    opts: &TraceOptions,
) -> Result<MixedSolution> {
    stop.validate()?;
    check_len(schedule.cols(), q.len())?;
    if q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(
            "q must be nonnegative and finite".into(),
        ));
    }
    // coordinates with q_j = 0 stay zero forever; solve on the support
    let keep: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput("q has no positive entry".into()));
    }
    let full = keep.len() == q.len();
    let local_sched;
    let sched = if full {
        schedule
    } else {
        local_sched = BlockSchedule {
            blocks: schedule.blocks.iter().map(|b| b.restrict(&keep)).collect(),
        };
        &local_sched
    };
    let reference: Option<Vec<f64>> = opts.reference.as_ref().map(|r| {
        if full {
            r.clone()
        } else {
            keep.iter().map(|&j| r[j]).collect()
        }
    });
    if let Some(r) = &opts.reference {
        check_len(q.len(), r.len())?;
    }

    let start = opts.clock.map(|c| c());
    let mut p: Vec<f64> = keep.iter().map(|&j| q[j]).collect();
    let mut trace = ConvergenceTrace::default();
    if opts.record_iterates {
        trace.iterates.push(p.clone());
    }
    let mut best = p.clone();
    let mut best_violation = f64::INFINITY;

    for _ in 0..stop.max_cycles {
        let mut kl_residuals = Vec::with_capacity(sched.len());
        for (k, block) in sched.blocks.iter().enumerate() {
            let r = block.kl_residual(&p)?;
            kl_residuals.push(r);
            block.step(&mut p)?;
            if opts.record_iterates {
                trace.steps.push(StepRecord {
                    block: k,
                    kl_residual: r,
                });
                trace.iterates.push(p.clone());
            }
        }
        let mut violations = Vec::with_capacity(sched.len());
        for block in &sched.blocks {
            violations.push(block.violation(&p)?);
        }
        let record = CycleRecord {
            violations,
            kl_residuals,
            kl_to_reference: match &reference {
                Some(r) => Some(kl_divergence(r, &p)?),
                None => None,
            },
            mass: p.iter().sum(),
            elapsed: match (opts.clock, start) {
                (Some(c), Some(s)) => Some(c() - s),
                _ => None,
            },
        };
        let worst = record.max_violation();
        trace.cycles.push(record);
        if worst <= stop.tol {
            trace.converged = true;
            best = p;
            break;
        }
        if worst < best_violation {
            best_violation = worst;
            best.clone_from(&p);
        }
    }

    let p = if full {
        best
    } else {
        let mut out = vec![0.0; q.len()];
        for (v, &j) in best.into_iter().zip(&keep) {
            out[j] = v;
        }
        out
    };
    if !full {
        for it in trace.iterates.iter_mut() {
            let mut out = vec![0.0; q.len()];
            for (v, &j) in it.iter().zip(&keep) {
                out[j] = *v;
            }
            *it = out;
        }
    }
    Ok(MixedSolution { p, trace })
}

/// Per-step Fejér slack `[KL(p_ref, pₖ) − KL(p_ref, pₖ₊₁)] − residualₖ`.
///
/// Needs a trace recorded with `record_iterates`; every value should be
/// nonnegative up to roundoff when `p_ref` is feasible.
pub fn fejer_audit(trace: &ConvergenceTrace, p_ref: &[f64]) -> Result<Vec<f64>> {
    if trace.iterates.len() != trace.steps.len() + 1 {
        return Err(Error::InvalidInput(
            "trace was recorded without iterates".into(),
        ));
    }
    let mut before = match trace.iterates.first() {
        Some(p) => kl_divergence(p_ref, p)?,
        None => return Ok(Vec::new()),
    };
    let mut out = Vec::with_capacity(trace.steps.len());
    for (step, next) in trace.steps.iter().zip(&trace.iterates[1..]) {
        let after = kl_divergence(p_ref, next)?;
        out.push((before - after) - step.kl_residual);
        before = after;
    }
    Ok(out)
}

/// Three points, one constraint `⟨(0.1, 0.5, 0.4), p⟩ = 0.42`, started from
/// `q = (0.5, 0.1, 0.4)`. Small enough to plot every iterate in barycentric
/// coordinates.
pub fn triangle_fixture() -> Result<(Vec<f64>, BlockSchedule)> {
    let a = Matrix::from_rows(&[[0.1, 0.5, 0.4]])?;
    let sched = BlockSchedule::new(vec![AffineBlock::gis(a, vec![0.42])?])?;
    Ok((vec![0.5, 0.1, 0.4], sched))
}
