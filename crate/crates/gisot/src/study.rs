//! Randomized comparison of alternating Sinkhorn scaling against the stacked
//! GIS update, cell by cell over grids of `ε`, `M` and tolerances.

use gisot_core::baseline::{sinkhorn_with, stacked_gis_sinkhorn_with, BaselineOptions};
use gisot_core::{Result, StopRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fft::GibbsKernel;

/// Study parameters. Every cell runs `trials` instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub epsilons: Vec<f64>,
    pub sizes: Vec<usize>,
    pub tolerances: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Exponent of the fast stacked variant compared against `½`.
    pub fast_exponent: f64,
    pub max_cycles: usize,
    /// Log the per-step Fejér slack (costs one extra kernel product per step).
    pub record_fejer: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.05, 0.1],
            sizes: vec![32, 64],
            tolerances: vec![1e-6],
            trials: 20,
            seed: 0,
            fast_exponent: 0.99,
            max_cycles: 2_000_000,
            record_fejer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub epsilon: f64,
    pub m: usize,
    pub tol: f64,
    pub trials: usize,
    pub sinkhorn_mean_cycles: f64,
    pub stacked_mean_cycles: f64,
    pub fast_mean_cycles: f64,
    /// Mean over instances of stacked(½) cycles / Sinkhorn cycles.
    pub ratio: f64,
    /// Mean over instances of stacked(fast) cycles / stacked(½) cycles.
    pub fast_ratio: f64,
    /// Largest sup-norm distance between the Sinkhorn and stacked(½) plans.
    pub max_plan_gap: f64,
    pub all_converged: bool,
    /// Smallest Fejér slack of the Sinkhorn and stacked(½) runs, when recorded.
    pub min_fejer_slack: Option<f64>,
    /// Smallest KL decrease of the fast stacked runs (negative means KL grew), when recorded.
    pub min_fast_fejer_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub instance_family: String,
    pub config: StudyConfig,
    pub cells: Vec<StudyCell>,
}

impl StudyReport {
    pub fn mean_ratio(&self) -> f64 {
        mean(self.cells.iter().map(|c| c.ratio))
    }

    pub fn mean_fast_ratio(&self) -> f64 {
        mean(self.cells.iter().map(|c| c.fast_ratio))
    }

    /// One CSV row per cell.
    pub fn to_csv(&self) -> std::result::Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(CsvCell::from(c))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Flat CSV view of a cell (the csv crate cannot serialize `Option` headers).
#[derive(Serialize)]
struct CsvCell {
    epsilon: f64,
    m: usize,
    tol: f64,
    trials: usize,
    sinkhorn_mean_cycles: f64,
    stacked_mean_cycles: f64,
    fast_mean_cycles: f64,
    ratio: f64,
    fast_ratio: f64,
    max_plan_gap: f64,
    all_converged: bool,
    min_fejer_slack: String,
    min_fast_fejer_slack: String,
}

impl From<&StudyCell> for CsvCell {
    fn from(c: &StudyCell) -> Self {
        Self {
            epsilon: c.epsilon,
            m: c.m,
            tol: c.tol,
            trials: c.trials,
            sinkhorn_mean_cycles: c.sinkhorn_mean_cycles,
            stacked_mean_cycles: c.stacked_mean_cycles,
            fast_mean_cycles: c.fast_mean_cycles,
            ratio: c.ratio,
            fast_ratio: c.fast_ratio,
            max_plan_gap: c.max_plan_gap,
            all_converged: c.all_converged,
            min_fejer_slack: c
                .min_fejer_slack
                .map(|v| format!("{v:e}"))
                .unwrap_or_default(),
            min_fast_fejer_slack: c
                .min_fast_fejer_slack
                .map(|v| format!("{v:e}"))
                .unwrap_or_default(),
        }
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Uniform `(0.1, 1)` weights, normalized.
pub fn random_histogram(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Equispaced grid on `[0, 1]` (a single point sits at 0).
pub fn unit_grid(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.0];
    }
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

fn run_cell(
    config: &StudyConfig,
    index: usize,
    epsilon: f64,
    m: usize,
    tol: f64,
) -> Result<StudyCell> {
    // each cell owns an independent stream, so the result does not depend on scheduling
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let kernel = GibbsKernel::line(&unit_grid(m), epsilon)?;
    let stop = StopRule::new(tol, config.max_cycles)?;
    let opts = BaselineOptions {
        record_fejer: config.record_fejer,
    };
    let mut sums = [0.0f64; 5];
    let mut gap = 0.0f64;
    let mut converged = true;
    let mut slack = f64::INFINITY;
    let mut fast_slack = f64::INFINITY;
    for _ in 0..config.trials {
        let mu = random_histogram(&mut rng, m);
        let nu = random_histogram(&mut rng, m);
        let s = sinkhorn_with(&mu, &nu, &kernel, &stop, opts)?;
        let g = stacked_gis_sinkhorn_with(&mu, &nu, &kernel, 0.5, &stop, opts)?;
        let f = stacked_gis_sinkhorn_with(&mu, &nu, &kernel, config.fast_exponent, &stop, opts)?;
        converged &= s.converged && g.converged && f.converged;
        sums[0] += s.cycles as f64;
        sums[1] += g.cycles as f64;
        sums[2] += f.cycles as f64;
        sums[3] += g.cycles as f64 / s.cycles as f64;
        sums[4] += f.cycles as f64 / g.cycles as f64;
        let (ps, pg) = (s.plan(&kernel), g.plan(&kernel));
        let d = ps
            .entries()
            .as_slice()
            .iter()
            .zip(pg.entries().as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        gap = gap.max(d);
        if config.record_fejer {
            slack = slack.min(s.min_fejer_slack()).min(g.min_fejer_slack());
            fast_slack = fast_slack.min(f.min_fejer_slack());
        }
    }
    let n = config.trials.max(1) as f64;
    Ok(StudyCell {
        epsilon,
        m,
        tol,
        trials: config.trials,
        sinkhorn_mean_cycles: sums[0] / n,
        stacked_mean_cycles: sums[1] / n,
        fast_mean_cycles: sums[2] / n,
        ratio: sums[3] / n,
        fast_ratio: sums[4] / n,
        max_plan_gap: gap,
        all_converged: converged,
        min_fejer_slack: config.record_fejer.then_some(slack),
        min_fast_fejer_slack: config.record_fejer.then_some(fast_slack),
    })
}

/// Runs every cell of the grid, in parallel, and reports them in grid order.
pub fn block_study(config: &StudyConfig) -> Result<StudyReport> {
    if config.epsilons.is_empty() || config.sizes.is_empty() || config.tolerances.is_empty() {
        return Err(gisot_core::Error::InvalidInput(
            "study grids must be nonempty".into(),
        ));
    }
    if config.trials == 0 || config.sizes.contains(&0) {
        return Err(gisot_core::Error::InvalidInput(
            "trials and sizes must be positive".into(),
        ));
    }
    let mut cells = Vec::new();
    for &e in &config.epsilons {
        for &m in &config.sizes {
            for &t in &config.tolerances {
                cells.push((e, m, t));
            }
        }
    }
    let cells = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(e, m, t))| run_cell(config, i, e, m, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyReport {
        instance_family: "mu, nu uniform on (0.1, 1) then normalized; squared distance on an equispaced grid of [0, 1]"
            .into(),
        config: config.clone(),
        cells,
    })
}
