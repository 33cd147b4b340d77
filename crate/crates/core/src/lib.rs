//! KL information projections onto intersections of affine subsets of the
//! probability simplex.
//!
//! Constraint groups whose projection is an explicit scaling are projected
//! exactly; every other group takes one generalized-iterative-scaling (GIS)
//! step per cycle. The same engine is specialized to several entropic optimal
//! transport problems:
//!
//! | module | problem |
//! |--------|---------|
//! | [`baseline`] | balanced entropic OT (Sinkhorn and the stacked GIS variant) |
//! | [`moment`] | OT towards a target measure constrained by linear moments |
//! | [`martingale`] | martingale OT in one dimension |
//! | [`weak`] | relaxed barycentric weak OT with an auxiliary plan |
//! | [`conic`] | conic (mass-lifted) unbalanced OT |
//!
//! The crate is `no_std` and only needs `alloc`. Anything that touches files,
//! clocks or FFT libraries lives in the companion `gisot` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose: it rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod conic;
mod error;
pub mod gis;
pub mod kernel;
pub mod kl;
pub mod martingale;
mod math;
pub mod matrix;
pub mod moment;
pub mod normalize;
pub mod oracle;
pub mod trace;
pub mod weak;

pub use error::{Error, Result};
pub use gis::{
    fejer_audit, gis_step, run_mixed, run_mixed_with, triangle_fixture, AffineBlock, BlockKind,
    BlockSchedule, MixedSolution, StopRule, TraceOptions,
};
pub use kernel::{DenseKernel, KernelOperator};
pub use kl::{entropy, kl_divergence, marginal_col, marginal_row, scaling_projection};
pub use matrix::{CouplingPlan, Histogram, Matrix};
pub use normalize::{normalize, normalize_with_margin, NormalizationParams, NormalizedSystem};
pub use trace::ConvergenceTrace;
