//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "gisot",
    version,
    about = "KL projections and entropic transport via mixed scaling/GIS cycles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// KL projection of a vector onto an intersection of affine blocks.
    Project(ProjectArgs),
    /// Entropic OT towards a target restricted by linear moments.
    MomentOt(MomentArgs),
    /// Entropic martingale OT on a common grid.
    MartingaleOt(MartingaleArgs),
    /// Relaxed barycentric weak OT with squared cost.
    WeakOt(WeakArgs),
    /// Conic unbalanced OT on lifted mass levels.
    UnbalancedOt(UnbalancedArgs),
    /// Randomized Sinkhorn versus stacked-GIS cycle counts.
    BlockStudy(BlockStudyArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Built-in fixture name.
    #[arg(long, conflicts_with = "spec")]
    pub fixture: Option<String>,
    /// JSON problem spec (see docs/formats.md).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Sup-norm violation tolerance (cost-change tolerance for `weak-ot --stop cost-change`).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Cycle budget; exit code 2 when it runs out
    #[arg(long)]
    pub max_cycles: Option<usize>,
    /// Overrides the entropy weight of the fixture or spec.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Table format; `summary.json` is always written.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Seed for randomized studies.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write transport plans.
    #[arg(long)]
    pub plans: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct MomentArgs {
    #[command(flatten)]
    pub common: Common,
    /// Use the dense kernel even on equispaced grids.
    #[arg(long)]
    pub dense: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MartingaleArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeakStop {
    CostChange,
    Violation,
}

#[derive(Debug, Clone, Args)]
pub struct WeakArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = WeakStop::CostChange)]
    pub stop: WeakStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    Stacked,
    Split,
}

#[derive(Debug, Clone, Args)]
pub struct UnbalancedArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Layout::Stacked)]
    pub layout: Layout,
}

#[derive(Debug, Clone, Args)]
pub struct BlockStudyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Entropy weights to sweep [default: 0.05,0.1]
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Grid sizes to sweep [default: 32,64]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Stopping tolerances to sweep [default: 1e-6]
    #[arg(long, value_delimiter = ',')]
    pub tols: Option<Vec<f64>>,
    /// Random instances per cell [default: 20]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Exponent of the over-relaxed stacked variant, in (0, 1) [default: 0.99]
    #[arg(long)]
    pub fast_exponent: Option<f64>,
    /// Record per-step Fejér slacks.
    #[arg(long)]
    pub fejer: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn fixture_and_spec_conflict() {
        assert!(Cli::try_parse_from([
            "gisot",
            "project",
            "--fixture",
            "triangle",
            "--spec",
            "a.json"
        ])
        .is_err());
        let c = Cli::try_parse_from(["gisot", "block-study", "--sizes", "8,16"]).unwrap();
        match c.command {
            Command::BlockStudy(b) => assert_eq!(b.sizes, Some(vec![8, 16])),
            _ => unreachable!(),
        }
    }
}
