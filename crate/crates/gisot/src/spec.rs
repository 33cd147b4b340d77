//! JSON problem specifications accepted through `--spec`.
//!
//! Every spec is a plain object; the layouts are documented in
//! `docs/formats.md`.

use gisot_core::{AffineBlock, BlockSchedule, Matrix, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKindSpec {
    Scaling,
    Gis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub kind: BlockKindSpec,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl BlockSpec {
    pub fn build(&self) -> Result<AffineBlock> {
        let a = Matrix::from_rows(&self.a)?;
        match self.kind {
            BlockKindSpec::Scaling => AffineBlock::scaling(a, self.b.clone()),
            BlockKindSpec::Gis => AffineBlock::gis(a, self.b.clone()),
        }
    }
}

/// `project`: KL projection of `q` onto the intersection of the blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSpec {
    pub q: Vec<f64>,
    pub blocks: Vec<BlockSpec>,
}

impl ProjectSpec {
    pub fn schedule(&self) -> Result<BlockSchedule> {
        BlockSchedule::new(
            self.blocks
                .iter()
                .map(BlockSpec::build)
                .collect::<Result<_>>()?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Geometry {
    /// Squared Euclidean distance on the real line.
    #[default]
    Line,
    /// Squared geodesic distance on a circle of the given length.
    Torus { period: f64 },
}

/// `moment-ot`: entropic OT from `mu` to the best `ν` with `A ν = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec {
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub geometry: Geometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairCost {
    /// `exp(y − x)`.
    #[default]
    ExpDiff,
    /// `(x − y)²`.
    Squared,
}

impl PairCost {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            Self::ExpDiff => (y - x).exp(),
            Self::Squared => (x - y) * (x - y),
        }
    }
}

/// `martingale-ot`: entropic martingale transport between `mu` and `nu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSpec {
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub cost: PairCost,
}

/// `weak-ot`: barycentric weak OT with squared cost; `aux_grid` defaults to `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakSpec {
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub aux_grid: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

/// `unbalanced-ot`: conic unbalanced OT with cost `k·d² + λ|k − l|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnbalancedSpec {
    pub grid: Vec<f64>,
    /// Target locations; defaults to `grid`.
    #[serde(default)]
    pub target_grid: Option<Vec<f64>>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub unit: f64,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub l_max: Option<usize>,
    #[serde(default = "one")]
    pub lambda: f64,
}
