use alloc::vec::Vec;

/// One completed cycle of a block-iterative solver.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleRecord {
    /// Sup-norm constraint violation per block, measured after the cycle.
    pub violations: Vec<f64>,
    /// Per block, the KL residual `KL(b, A p)` seen just before that block's step.
    pub kl_residuals: Vec<f64>,
    /// `KL(p_ref, p)` after the cycle, when a reference point was supplied.
    pub kl_to_reference: Option<f64>,
    /// Total mass `‖p‖₁` after the cycle.
    pub mass: f64,
    /// Seconds since the start of the run, when a clock was supplied.
    pub elapsed: Option<f64>,
}

impl CycleRecord {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().copied().fold(0.0, f64::max)
    }
}

/// One block step; recorded only when iterate recording is switched on.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub block: usize,
    /// Lower bound on the KL decrease this step guarantees toward any feasible point.
    pub kl_residual: f64,
}

/// Per-cycle history of a solver run.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceTrace {
    pub cycles: Vec<CycleRecord>,
    /// Iterates before and after every step (`steps.len() + 1` entries).
    pub iterates: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn final_violation(&self) -> f64 {
        self.cycles
            .last()
            .map_or(f64::INFINITY, CycleRecord::max_violation)
    }
}
