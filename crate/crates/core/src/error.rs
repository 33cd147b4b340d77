use alloc::string::String;

/// Errors produced by the projection engine and the transport solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A zero/one scaling row has no mass to scale but a positive target.
    #[error("infeasible scaling: masked mass is zero but target is {target}")]
    InfeasibleScaling { target: f64 },

    /// A constraint row is constant on the simplex and cannot match its right-hand side.
    #[error("structurally infeasible constraint row {row}")]
    StructurallyInfeasible { row: usize },

    /// `(A p)_i = 0` while `b_i > 0`: the iterate lost all mass the constraint needs.
    #[error("infeasible iterate: constraint row {row} has zero mass but target {target}")]
    Infeasible { row: usize, target: f64 },

    #[error("numerical underflow in kernel application at index {index}; try a larger epsilon")]
    Underflow { index: usize },

    #[error("unsupported grid: {0}")]
    UnsupportedGrid(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    /// Measures are not in convex order, so no martingale coupling exists.
    #[error("measures are not in convex order (min integral {min}, endpoint {endpoint})")]
    NotInConvexOrder { min: f64, endpoint: f64 },

    #[error("invalid shift {0}: not a multiple of the grid spacing")]
    InvalidShift(f64),

    #[error("auxiliary grid does not cover the convex hull of the source grid")]
    InvalidAuxGrid,

    /// Total mass is not an integer number of units.
    #[error(
        "total mass {mass} is not an integer multiple of the unit; suggested unit {suggested_unit}"
    )]
    RequiresRounding { mass: f64, suggested_unit: f64 },

    #[error("problem too large: {entries} entries exceed the budget of {budget}")]
    TooLarge { entries: usize, budget: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
