//! One runner per subcommand. Each fills a [`Summary`] and writes its tables;
//! [`execute`] turns the outcome into an exit code and always writes
//! `summary.json` when the output directory exists.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use gisot_core::conic::{self, ConicLayout, LiftedProblem};
use gisot_core::kernel::{
    cost_matrix, equidistant_spacing, torus_squared_distance_cost, KernelOperator,
};
use gisot_core::martingale::{self, MartingaleProblem};
use gisot_core::moment::{self, MomentProblem};
use gisot_core::weak::{self, WeakOptions, WeakProblem, WeakStopKind};
use gisot_core::{
    kl_divergence, oracle, run_mixed_with, AffineBlock, ConvergenceTrace, DenseKernel, Histogram,
    Matrix, StopRule, TraceOptions,
};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::cli::{
    BlockStudyArgs, Cli, Command, Common, MomentArgs, ProjectArgs, UnbalancedArgs, WeakArgs,
};
use crate::fft::{GibbsKernel, GRID_TOL};
use crate::output::{finite, Artifacts, Summary, Table};
use crate::spec::{Geometry, MartingaleSpec, MomentSpec, ProjectSpec, UnbalancedSpec, WeakSpec};
use crate::study::{block_study, StudyConfig};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_REFUSED: i32 = 3;

/// Largest problem the `project` command hands to the Newton oracle.
const ORACLE_MAX_COLS: usize = 400;
/// Cycle budget of the triangle fixture; one trajectory row per cycle.
pub const TRIANGLE_CYCLES: usize = 100;
/// Relative row threshold used when counting support clusters of a plan.
pub const CLUSTER_THRESHOLD: f64 = 1e-4;
/// Entry budget for writing dense moment plans.
const PLAN_BUDGET: usize = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] gisot_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        use gisot_core::Error as E;
        match self {
            Self::Core(
                E::NotInConvexOrder { .. }
                | E::InfeasibleScaling { .. }
                | E::StructurallyInfeasible { .. }
                | E::Infeasible { .. }
                | E::RequiresRounding { .. }
                | E::TooLarge { .. }
                | E::Underflow { .. },
            ) => EXIT_REFUSED,
            _ => EXIT_INPUT,
        }
    }

    /// Short machine-readable tag for the summary.
    pub fn kind(&self) -> &'static str {
        use gisot_core::Error as E;
        match self {
            Self::Core(e) => match e {
                E::NotInConvexOrder { .. } => "not-in-convex-order",
                E::InfeasibleScaling { .. }
                | E::StructurallyInfeasible { .. }
                | E::Infeasible { .. } => "infeasible",
                E::RequiresRounding { .. } => "requires-rounding",
                E::TooLarge { .. } => "too-large",
                E::Underflow { .. } => "underflow",
                _ => "invalid-input",
            },
            Self::Input(_) | Self::Json(_) => "invalid-input",
            Self::Io(_) | Self::Csv(_) => "io",
        }
    }
}

type CmdResult = Result<(), CmdError>;

fn load_spec<T: DeserializeOwned>(path: &Path) -> Result<T, CmdError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CmdError::Input(format!("cannot read spec {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CmdError::Input(format!("malformed spec {}: {e}", path.display())))
}

fn source_label(common: &Common, default_fixture: &str) -> String {
    match (&common.spec, &common.fixture) {
        (Some(p), _) => format!("spec:{}", p.display()),
        (None, Some(f)) => format!("fixture:{f}"),
        (None, None) => format!("fixture:{default_fixture}"),
    }
}

fn fixture_name<'a>(
    common: &'a Common,
    default: &'a str,
    known: &[&str],
) -> Result<&'a str, CmdError> {
    let name = common.fixture.as_deref().unwrap_or(default);
    if known.contains(&name) {
        Ok(name)
    } else {
        Err(CmdError::Input(format!(
            "unknown fixture '{name}'; expected one of {}",
            known.join(", ")
        )))
    }
}

fn stop_rule(common: &Common, tol: f64, max_cycles: usize) -> Result<StopRule, CmdError> {
    Ok(StopRule::new(
        common.tol.unwrap_or(tol),
        common.max_cycles.unwrap_or(max_cycles),
    )?)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Per-cycle trace with one violation column per constraint group.
fn trace_table(trace: &ConvergenceTrace, names: &[&str], extra: Option<(&str, &[f64])>) -> Table {
    let mut cols = vec!["cycle".to_string()];
    cols.extend(names.iter().map(|n| format!("violation_{n}")));
    let with_kl = trace
        .cycles
        .first()
        .is_some_and(|c| c.kl_residuals.len() == names.len());
    if with_kl {
        cols.extend(names.iter().map(|n| format!("kl_residual_{n}")));
    }
    cols.push("mass".into());
    if let Some((name, _)) = extra {
        cols.push(name.into());
    }
    let mut t = Table::new(cols);
    for (c, rec) in trace.cycles.iter().enumerate() {
        let mut row = vec![(c + 1) as f64];
        row.extend(&rec.violations);
        if with_kl {
            row.extend(&rec.kl_residuals);
        }
        row.push(rec.mass);
        if let Some((_, vals)) = extra {
            row.push(vals[c]);
        }
        t.push(row);
    }
    t
}

fn plan_table(pi: &Matrix) -> Table {
    let mut t = Table::new(["i", "j", "mass"]);
    for i in 0..pi.rows() {
        for (j, &v) in pi.row(i).iter().enumerate() {
            if v > 0.0 {
                t.push(vec![i as f64, j as f64, v]);
            }
        }
    }
    t
}

fn finish_trace(summary: &mut Summary, trace: &ConvergenceTrace) {
    summary.converged = trace.converged;
    summary.cycles = trace.len();
    summary.max_violation = trace.cycles.last().map(|c| c.max_violation());
}

/// Runs the parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let (name, common, default_fixture) = match &cli.command {
        Command::Project(a) => ("project", &a.common, "triangle"),
        Command::MomentOt(a) => ("moment-ot", &a.common, "interval"),
        Command::MartingaleOt(a) => ("martingale-ot", &a.common, "curtain"),
        Command::WeakOt(a) => ("weak-ot", &a.common, "curtain"),
        Command::UnbalancedOt(a) => ("unbalanced-ot", &a.common, "spread"),
        Command::BlockStudy(a) => ("block-study", &a.common, "random"),
    };
    let mut art = match Artifacts::create(&common.out, common.format) {
        Ok(a) => a,
        Err(e) => {
            eprintln!(
                "error: cannot create output directory {}: {e}",
                common.out.display()
            );
            return EXIT_INPUT;
        }
    };
    let mut summary = Summary::new(name, source_label(common, default_fixture));
    let result = match &cli.command {
        Command::Project(a) => cmd_project(a, &mut art, &mut summary),
        Command::MomentOt(a) => cmd_moment_ot(a, &mut art, &mut summary),
        Command::MartingaleOt(a) => cmd_martingale_ot(&a.common, &mut art, &mut summary),
        Command::WeakOt(a) => cmd_weak_ot(a, &mut art, &mut summary),
        Command::UnbalancedOt(a) => cmd_unbalanced_ot(a, &mut art, &mut summary),
        Command::BlockStudy(a) => cmd_block_study(a, &mut art, &mut summary),
    };
    let code = match result {
        Ok(()) if summary.converged => EXIT_CONVERGED,
        Ok(()) => {
            eprintln!("not converged after {} cycles", summary.cycles);
            EXIT_NOT_CONVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            summary.converged = false;
            summary.metric("error", e.to_string());
            summary.metric("error_kind", e.kind());
            e.exit_code()
        }
    };
    summary.exit_code = code;
    if let Err(e) = art.summary(&summary) {
        eprintln!("error: cannot write summary: {e}");
        return EXIT_INPUT;
    }
    code
}

pub fn cmd_project(args: &ProjectArgs, art: &mut Artifacts, summary: &mut Summary) -> CmdResult {
    let common = &args.common;
    let (q, sched, default_cycles) = match &common.spec {
        Some(path) => {
            let spec: ProjectSpec = load_spec(path)?;
            (spec.q.clone(), spec.schedule()?, 10_000)
        }
        None => {
            fixture_name(common, "triangle", &["triangle"])?;
            let (q, s) = gisot_core::triangle_fixture()?;
            (q, s, TRIANGLE_CYCLES)
        }
    };
    // without an explicit tolerance the triangle fixture runs a fixed number
    // of cycles so the trajectory always has the same length
    let fixed = common.spec.is_none() && common.tol.is_none();
    let stop = if fixed {
        StopRule::new(
            f64::MIN_POSITIVE,
            common.max_cycles.unwrap_or(default_cycles),
        )?
    } else {
        stop_rule(common, 1e-12, default_cycles)?
    };
    let opts = TraceOptions {
        record_iterates: true,
        ..TraceOptions::default()
    };
    let sol = run_mixed_with(&q, &sched, &stop, &opts)?;
    let n = q.len();
    let nb = sched.len();

    let mut cols = vec!["cycle".to_string()];
    cols.extend((0..n).map(|j| format!("p{j}")));
    cols.extend((0..n).map(|j| format!("r{j}")));
    cols.extend(["mass".to_string(), "max_violation".to_string()]);
    let mut traj = Table::new(cols);
    for (c, rec) in sol.trace.cycles.iter().enumerate() {
        let p = &sol.trace.iterates[(c + 1) * nb];
        let mass: f64 = p.iter().sum();
        let mut row = vec![(c + 1) as f64];
        row.extend(p);
        row.extend(p.iter().map(|v| v / mass));
        row.extend([mass, rec.max_violation()]);
        traj.push(row);
    }
    art.table("trajectory", &traj)?;
    let names: Vec<String> = (0..nb).map(|k| format!("block{k}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    art.table("trace", &trace_table(&sol.trace, &names, None))?;

    let reference = if n <= ORACLE_MAX_COLS {
        match oracle::project_intersection(&q, sched.blocks(), 1e-13) {
            Ok(p) => Some(p),
            Err(e) => {
                summary.metric("oracle_error", e.to_string());
                None
            }
        }
    } else {
        None
    };
    let mut fin = Table::new(["index", "q", "p", "oracle"]);
    for j in 0..n {
        fin.push(vec![
            j as f64,
            q[j],
            sol.p[j],
            reference.as_ref().map_or(f64::NAN, |r| r[j]),
        ]);
    }
    art.table("solution", &fin)?;

    finish_trace(summary, &sol.trace);
    let violation = sched.violation(&sol.p)?;
    summary.max_violation = Some(violation);
    if fixed {
        summary.converged = violation <= 1e-12;
    }
    summary.metric("p", sol.p.iter().map(|v| finite(*v)).collect::<Vec<_>>());
    summary.metric_f64("kl_to_q", kl_divergence(&sol.p, &q)?);
    summary.metric("blocks", nb);
    if let Some(r) = reference {
        let d = sol
            .p
            .iter()
            .zip(&r)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        summary.metric_f64("oracle_distance", d);
    }
    Ok(())
}

/// Kernel on a line or torus grid: FFT when the grid is equispaced, dense otherwise.
fn moment_kernel(
    grid: &[f64],
    geometry: Geometry,
    epsilon: f64,
    dense: bool,
) -> Result<GibbsKernel, CmdError> {
    Ok(match geometry {
        Geometry::Line if dense => GibbsKernel::dense(
            &gisot_core::kernel::squared_distance_cost(grid, grid),
            epsilon,
        )?,
        Geometry::Line => GibbsKernel::line(grid, epsilon)?,
        Geometry::Torus { period } => {
            let m = grid.len();
            let evenly = equidistant_spacing(grid, GRID_TOL)
                .is_some_and(|h| (h * m as f64 - period).abs() < 1e-9);
            if evenly && !dense {
                GibbsKernel::torus(m, period, epsilon)?
            } else {
                GibbsKernel::dense(&torus_squared_distance_cost(grid, period), epsilon)?
            }
        }
    })
}

pub fn cmd_moment_ot(args: &MomentArgs, art: &mut Artifacts, summary: &mut Summary) -> CmdResult {
    let common = &args.common;
    let (problem, geometry, fixture): (MomentProblem<DenseKernel>, Geometry, Option<&str>) =
        match &common.spec {
            Some(path) => {
                let s: MomentSpec = load_spec(path)?;
                let placeholder =
                    DenseKernel::from_matrix(Matrix::filled(s.grid.len(), s.grid.len(), 1.0))?;
                let p = MomentProblem {
                    mu: Histogram::on_grid(s.mu.clone(), s.grid.clone())?,
                    constraints: AffineBlock::gis(Matrix::from_rows(&s.a)?, s.b.clone())?,
                    kernel: placeholder,
                    epsilon: s.epsilon,
                };
                (p, s.geometry, None)
            }
            None => match fixture_name(common, "interval", &["interval", "torus"])? {
                "interval" => (
                    moment::build_interval_experiment()?,
                    Geometry::Line,
                    Some("interval"),
                ),
                _ => (
                    moment::torus_experiment(500, common.epsilon.unwrap_or(moment::TORUS_EPSILON))?,
                    Geometry::Torus { period: 2.0 * PI },
                    Some("torus"),
                ),
            },
        };
    let epsilon = common.epsilon.unwrap_or(problem.epsilon);
    let grid = problem.mu.coords().expect("grid").to_vec();
    let kernel = moment_kernel(&grid, geometry, epsilon, args.dense)?;
    let mut problem = problem.with_kernel(kernel);
    problem.epsilon = epsilon;

    let stop = stop_rule(common, 1e-9, 200_000)?;
    let sol = moment::solve_dual(&problem, &stop)?;
    let variant = problem.kernel.variant_name();
    let mu = problem.mu.weights();

    let mut measures = Table::new(["index", "x", "mu", "nu"]);
    for (i, &x) in grid.iter().enumerate() {
        measures.push(vec![i as f64, x, mu[i], sol.nu[i]]);
    }
    art.table("measures", &measures)?;
    art.table(
        "trace",
        &trace_table(&sol.trace, &["rows", "moments"], None),
    )?;
    if common.plans {
        let plan = moment::reconstruct_plan(&sol.u, &sol.v, &problem.kernel, PLAN_BUDGET)?;
        art.table("plan", &plan_table(plan.entries()))?;
    }

    finish_trace(summary, &sol.trace);
    summary.metric("kernel", variant);
    summary.metric_f64("epsilon", epsilon);
    let c = &problem.constraints;
    let residual: Vec<f64> = c
        .a()
        .matvec(&sol.nu)?
        .iter()
        .zip(c.b())
        .map(|(a, b)| a - b)
        .collect();
    summary.metric(
        "moment_residuals",
        residual.iter().map(|v| finite(*v)).collect::<Vec<_>>(),
    );
    summary.metric_f64("moment_residual", sup(&residual));
    let row_residual: Vec<f64> = {
        let kv = problem.kernel.apply(&sol.v)?;
        sol.u
            .iter()
            .zip(&kv)
            .zip(mu)
            .map(|((u, k), m)| u * k - m)
            .collect()
    };
    summary.metric_f64("row_residual", sup(&row_residual));
    match geometry {
        Geometry::Line => {
            let mean: f64 = sol.nu.iter().zip(&grid).map(|(n, x)| n * x).sum();
            let second: f64 = sol.nu.iter().zip(&grid).map(|(n, x)| n * x * x).sum();
            summary.metric_f64("mean", mean);
            summary.metric_f64("second_moment", second);
            if fixture == Some("interval") {
                let reference = moment::sampled_gaussian(&grid, 0.5, 0.15);
                summary.metric_f64(
                    "tv_to_reference",
                    moment::total_variation(&sol.nu, &reference),
                );
            }
        }
        Geometry::Torus { period } => {
            let scaled: Vec<f64> = grid.iter().map(|x| x * 2.0 * PI / period).collect();
            let z = moment::circular_mean(&sol.nu, &scaled);
            summary.metric("circular_mean", vec![finite(z.0), finite(z.1)]);
            summary.metric("local_maxima", moment::cyclic_local_maxima(&sol.nu));
        }
    }
    Ok(())
}

pub fn cmd_martingale_ot(common: &Common, art: &mut Artifacts, summary: &mut Summary) -> CmdResult {
    let problem: MartingaleProblem = match &common.spec {
        Some(path) => {
            let s: MartingaleSpec = load_spec(path)?;
            let mu = Histogram::on_grid(s.mu.clone(), s.grid.clone())?;
            let nu = Histogram::on_grid(s.nu.clone(), s.grid.clone())?;
            let cost = cost_matrix(&s.grid, &s.grid, |x, y| s.cost.eval(x, y));
            let eps = common.epsilon.unwrap_or(s.epsilon);
            MartingaleProblem::new(mu, nu, DenseKernel::from_cost(&cost, eps)?)?
        }
        None => {
            fixture_name(common, "curtain", &["curtain"])?;
            match common.epsilon {
                Some(eps) => martingale::curtain_fixture_with(100, 10, eps)?,
                None => martingale::curtain_fixture()?,
            }
        }
    };
    let cert = problem.certificate().clone();
    summary.metric_f64("convex_order_min", cert.min);
    summary.metric_f64("convex_order_endpoint", cert.endpoint);

    let stop = stop_rule(common, 1e-5, 100_000)?;
    let sol = martingale::solve(&problem, &stop)?;
    let grid = problem.grid();
    let (mu, nu) = (problem.mu().weights(), problem.nu().weights());
    let pi = sol.plan.entries();

    let mut measures = Table::new(["index", "x", "mu", "nu"]);
    for (i, &x) in grid.iter().enumerate() {
        measures.push(vec![i as f64, x, mu[i], nu[i]]);
    }
    art.table("measures", &measures)?;
    art.table(
        "trace",
        &trace_table(&sol.trace, &["rows", "cols", "martingale"], None),
    )?;
    if common.plans {
        art.table("plan", &plan_table(pi))?;
    }

    finish_trace(summary, &sol.trace);
    let clusters = (0..pi.rows())
        .filter(|&i| mu[i] > 0.0)
        .map(|i| martingale::support_clusters(pi.row(i), CLUSTER_THRESHOLD))
        .max()
        .unwrap_or(0);
    summary.metric("max_clusters", clusters);
    summary.metric_f64("cluster_threshold", CLUSTER_THRESHOLD);
    let last = sol
        .trace
        .cycles
        .last()
        .map(|c| c.violations.clone())
        .unwrap_or_default();
    if let [row, col, mart] = last[..] {
        summary.metric_f64("row_residual", row);
        summary.metric_f64("col_residual", col);
        summary.metric_f64("martingale_residual", mart);
    }
    Ok(())
}

pub fn cmd_weak_ot(args: &WeakArgs, art: &mut Artifacts, summary: &mut Summary) -> CmdResult {
    let common = &args.common;
    let problem: WeakProblem = match &common.spec {
        Some(path) => {
            let s: WeakSpec = load_spec(path)?;
            let mu = Histogram::on_grid(s.mu.clone(), s.grid.clone())?;
            let nu = Histogram::on_grid(s.nu.clone(), s.grid.clone())?;
            let y = s.aux_grid.clone().unwrap_or_else(|| s.grid.clone());
            WeakProblem::new(
                mu,
                nu,
                y,
                weak::squared,
                common.epsilon.unwrap_or(s.epsilon),
            )?
        }
        None => {
            fixture_name(common, "curtain", &["curtain"])?;
            weak::curtain_weak_fixture(common.epsilon.unwrap_or(1e-10))?
        }
    };
    let stop_kind = match args.stop {
        crate::cli::WeakStop::CostChange => WeakStopKind::CostChange,
        crate::cli::WeakStop::Violation => WeakStopKind::Violation,
    };
    let stop = stop_rule(common, 1e-9, 100_000)?;
    let opts = WeakOptions {
        stop_kind,
        ..WeakOptions::default()
    };
    let sol = weak::solve_with(&problem, &stop, opts)?;
    let x = problem.x();
    let (mu, nu) = (problem.mu.weights(), problem.nu.weights());

    let mut measures = Table::new(["index", "x", "mu", "nu", "mean"]);
    for (i, &xi) in x.iter().enumerate() {
        measures.push(vec![i as f64, xi, mu[i], nu[i], sol.means[i]]);
    }
    art.table("measures", &measures)?;
    art.table(
        "trace",
        &trace_table(
            &sol.trace,
            &["rows_x", "cols_x", "rows_y", "means"],
            Some(("weak_cost", &sol.costs)),
        ),
    )?;
    if common.plans {
        art.table("plan_x", &plan_table(sol.pi_x.entries()))?;
        art.table("plan_y", &plan_table(sol.pi_y.entries()))?;
    }

    finish_trace(summary, &sol.trace);
    summary.metric(
        "stop",
        if stop_kind == WeakStopKind::CostChange {
            "cost-change"
        } else {
            "violation"
        },
    );
    summary.metric_f64("epsilon", problem.epsilon);
    summary.metric_f64("weak_cost", sol.weak_cost);
    summary.metric_f64(
        "jensen_gap",
        weak::jensen_gap(sol.pi_y.entries(), mu, x, &problem.y, problem.cost_fn)?,
    );
    summary.metric_f64(
        "mean_consistency",
        weak::mean_consistency(sol.pi_x.entries(), sol.pi_y.entries(), x, &problem.y)?,
    );
    Ok(())
}

pub fn cmd_unbalanced_ot(
    args: &UnbalancedArgs,
    art: &mut Artifacts,
    summary: &mut Summary,
) -> CmdResult {
    let common = &args.common;
    let (x, y, problem): (Vec<f64>, Vec<f64>, LiftedProblem) = match &common.spec {
        Some(path) => {
            let s: UnbalancedSpec = load_spec(path)?;
            let y = s.target_grid.clone().unwrap_or_else(|| s.grid.clone());
            if s.mu.len() != s.grid.len() || s.nu.len() != y.len() {
                return Err(CmdError::Input(
                    "mu/nu lengths must match their grids".into(),
                ));
            }
            let (xc, yc, lambda) = (s.grid.clone(), y.clone(), s.lambda);
            let p = LiftedProblem::new(
                &s.mu,
                &s.nu,
                s.unit,
                s.k_max,
                s.l_max,
                |sh| conic::default_cost(&xc, &yc, sh, lambda),
                common.epsilon.unwrap_or(s.epsilon),
            )?;
            (s.grid, y, p)
        }
        None => {
            fixture_name(common, "spread", &["spread"])?;
            let (x, p) = conic::conic_fixture()?;
            let p = match common.epsilon {
                Some(eps) => LiftedProblem { epsilon: eps, ..p },
                None => p,
            };
            (x.clone(), x, p)
        }
    };
    let layout = match args.layout {
        crate::cli::Layout::Stacked => ConicLayout::Stacked,
        crate::cli::Layout::Split => ConicLayout::Split,
    };
    let stop = stop_rule(common, 1e-9, 100_000)?;
    let sol = conic::solve_with(&problem, &stop, layout, &TraceOptions::default())?;
    let c = &sol.coupling;

    let mut entries = Table::new(["i", "k", "j", "l", "mass"]);
    for (i, k, j, l, v) in c.nonzeros() {
        entries.push(vec![i as f64, k as f64, j as f64, l as f64, v]);
    }
    art.table("coupling", &entries)?;
    let lp = c.location_plan();
    art.table("location_plan", &plan_table(&lp))?;
    let (src, tgt) = (c.source_mass(), c.target_mass());
    let mut ms = Table::new(["side", "index", "x", "target", "lifted"]);
    for (i, &xi) in x.iter().enumerate() {
        ms.push(vec![
            0.0,
            i as f64,
            xi,
            problem.mu[i] * problem.unit,
            src[i] * problem.unit,
        ]);
    }
    for (j, &yj) in y.iter().enumerate() {
        ms.push(vec![
            1.0,
            j as f64,
            yj,
            problem.nu[j] * problem.unit,
            tgt[j] * problem.unit,
        ]);
    }
    art.table("marginals", &ms)?;
    let names: &[&str] = match layout {
        ConicLayout::Stacked => &["stacked"],
        ConicLayout::Split => &["source", "target"],
    };
    art.table("trace", &trace_table(&sol.trace, names, None))?;

    finish_trace(summary, &sol.trace);
    let (rs, rt, r1) = conic::conic_residuals(c, &problem.mu, &problem.nu)?;
    summary.metric_f64("source_residual", sup(&rs) * problem.unit);
    summary.metric_f64("target_residual", sup(&rt) * problem.unit);
    summary.metric_f64("total_mass_residual", r1);
    summary.metric_f64("unit", problem.unit);
    summary.metric("k_max", problem.shape.k_max);
    summary.metric("l_max", problem.shape.l_max);
    summary.metric_f64("epsilon", problem.epsilon);
    summary.metric(
        "layout",
        if layout == ConicLayout::Stacked {
            "stacked"
        } else {
            "split"
        },
    );
    summary.metric("nonzeros", entries.rows.len());
    Ok(())
}

pub fn cmd_block_study(
    args: &BlockStudyArgs,
    art: &mut Artifacts,
    summary: &mut Summary,
) -> CmdResult {
    let common = &args.common;
    if common.spec.is_some() || common.fixture.is_some() {
        return Err(CmdError::Input(
            "block-study takes no fixture or spec; use the grid flags".into(),
        ));
    }
    let mut config = StudyConfig {
        seed: common.seed,
        record_fejer: args.fejer,
        ..StudyConfig::default()
    };
    if let Some(e) = &args.epsilons {
        config.epsilons.clone_from(e);
    } else if let Some(e) = common.epsilon {
        config.epsilons = vec![e];
    }
    if let Some(s) = &args.sizes {
        config.sizes.clone_from(s);
    }
    if let Some(t) = &args.tols {
        config.tolerances.clone_from(t);
    } else if let Some(t) = common.tol {
        config.tolerances = vec![t];
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(f) = args.fast_exponent {
        config.fast_exponent = f;
    }
    if let Some(m) = common.max_cycles {
        config.max_cycles = m;
    }
    let report = block_study(&config)?;
    art.raw("study.csv", &report.to_csv()?)?;
    art.raw(
        "study.json",
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;

    summary.converged = report.cells.iter().all(|c| c.all_converged);
    summary.metric("cells", report.cells.len());
    summary.metric_f64("mean_ratio", report.mean_ratio());
    summary.metric_f64("mean_fast_ratio", report.mean_fast_ratio());
    summary.metric_f64(
        "max_plan_gap",
        report
            .cells
            .iter()
            .map(|c| c.max_plan_gap)
            .fold(0.0, f64::max),
    );
    if let Some(s) = report
        .cells
        .iter()
        .filter_map(|c| c.min_fejer_slack)
        .reduce(f64::min)
    {
        summary.metric_f64("min_fejer_slack", s);
    }
    if let Some(s) = report
        .cells
        .iter()
        .filter_map(|c| c.min_fast_fejer_slack)
        .reduce(f64::min)
    {
        summary.metric_f64("min_fast_fejer_slack", s);
    }
    summary.metric("instance_family", json!(report.instance_family));
    Ok(())
}
