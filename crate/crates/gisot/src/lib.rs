//! Standard-library companion to `gisot-core`: FFT Gibbs kernels, the block
//! study, JSON problem specs, CSV/JSON output and the `gisot` command line.

pub mod cli;
pub mod commands;
pub mod fft;
pub mod output;
pub mod spec;
pub mod study;

pub use commands::execute;
pub use fft::GibbsKernel;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
