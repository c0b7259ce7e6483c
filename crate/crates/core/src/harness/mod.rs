//! Experiment setup, execution and artifacts.

pub mod config;
pub mod geometry;
pub mod io;
pub mod target;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

pub use config::{ExperimentConfig, GeometryKind, StartModel, TargetKind};
pub use geometry::gen_geometry;
pub use io::{read_model, render, write_model, write_pgm};
pub use target::{gen_target, TargetModel};

use crate::error::{Error, Result};
use crate::ledger::{SolveCounts, SolveLedger};
use crate::linalg::{norm, sub};
use crate::optim::{
    run_gncg, run_gogn, run_lbfgs, run_nlcg, write_trace_csv, Budget, GognOptions, NlcgOptions, Objective,
    OptimizerKind, RunOptions, RunResult, TraceRecord,
};
use crate::problem::{
    clamp_diagonal, make_noisy_data, receiver_weights, simulate, DataMisfit, DataSet, FwiProblem, Geometry,
    GaussNewtonProduct,
};
use crate::regularizer::{balanced_lambda, default_nu, SmoothingOperator};
use crate::wave::{ModelGrid, SimGrid};

/// Range used for PGM renders: the target's cap.
fn render_range(cfg: &ExperimentConfig) -> f64 {
    cfg.target.cap
}

/// Everything shared by the optimizer runs of one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub target: TargetModel,
    pub problem: FwiProblem,
    pub m_start: Vec<f64>,
    pub reg: SmoothingOperator,
    /// Clamped `J ᵀW²J · 1` at the start model.
    pub h0_diag: Vec<f64>,
    /// Solves spent on data generation and the diagonal estimate; not charged
    /// to any optimizer.
    pub setup_solves: SolveCounts,
}

impl Prepared {
    pub fn grid(&self) -> &SimGrid {
        &self.problem.grid
    }

    pub fn geometry(&self) -> &Geometry {
        &self.problem.geometry
    }

    pub fn n_sources(&self) -> usize {
        self.problem.n_terms()
    }
}

/// Target, geometry and noisy data, without the regularizer.
pub fn make_data(cfg: &ExperimentConfig, ledger: &SolveLedger) -> Result<(TargetModel, Geometry, DataSet)> {
    cfg.validate()?;
    let target = gen_target(&cfg.target, &cfg.grid)?;
    let geometry = gen_geometry(&cfg.geometry, &cfg.grid)?;
    let clean = simulate(&target.model, &geometry, &cfg.grid, ledger)?;
    let weights = receiver_weights(&geometry, &clean, cfg.data.sigma_k_km)?;
    let data = make_noisy_data(clean, cfg.data.sigma, cfg.data.seed)?.with_weights(weights)?;
    Ok((target, geometry, data))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let ledger = SolveLedger::new();
    let (target, geometry, data) = make_data(cfg, &ledger)?;
    let problem = FwiProblem::new(cfg.grid.clone(), geometry, data)?;
    let m_start = match cfg.optimizer.start {
        StartModel::Zero => vec![0.0; cfg.grid.n_params()],
        StartModel::Truth => target.model.values.clone(),
    };
    // the estimate runs on a scratch copy so the optimizers' ledgers start at 0
    let scratch = problem.clone();
    let raw = scratch.forward_fields(&m_start)?.apply(&vec![1.0; m_start.len()])?;
    let h0_diag = clamp_diagonal(raw);
    let counts = ledger.counts();
    let sc = scratch.ledger().counts();
    let setup_solves = SolveCounts {
        forward: counts.forward + sc.forward,
        adjoint: counts.adjoint + sc.adjoint,
        born: counts.born + sc.born,
    };

    let h = cfg.grid.h;
    let nu = cfg.regularizer.nu.unwrap_or_else(|| default_nu(h));
    let h0_max = h0_diag.iter().cloned().fold(0.0, f64::max);
    let lambda = cfg.regularizer.lambda.unwrap_or_else(|| balanced_lambda(h0_max, nu, h));
    let reg = SmoothingOperator::build(
        cfg.grid.nx,
        cfg.grid.ny,
        h,
        lambda,
        nu,
        m_start.clone(),
        cfg.regularizer.boundary,
    )?;
    info!("setup: lambda = {lambda:.4e}, nu = {nu:.4e}, {setup_solves}");
    Ok(Prepared { config: cfg.clone(), target, problem, m_start, reg, h0_diag, setup_solves })
}

/// Runs one optimizer on a fresh copy of the problem, so its ledger counts
/// that run only.
pub fn run_optimizer(prep: &Prepared, kind: OptimizerKind) -> Result<RunResult> {
    let problem = prep.problem.clone();
    let obj = Objective::new(&problem, &prep.reg)?;
    let cfg = &prep.config;
    let opts = RunOptions::new(Budget { max_solves: cfg.optimizer.budget }, cfg.linesearch.policy_for(kind))
        .with_truth(prep.target.model.values.clone());
    let result = match kind {
        OptimizerKind::Gogn => run_gogn(&obj, &prep.m_start, &opts, &GognOptions { eps_phi: cfg.optimizer.eps_phi }),
        OptimizerKind::Nlcg => run_nlcg(&obj, &prep.h0_diag, &prep.m_start, &opts, &NlcgOptions::default()),
        OptimizerKind::Lbfgs => run_lbfgs(&obj, &prep.h0_diag, &prep.m_start, &opts, &cfg.optimizer.lbfgs()),
        OptimizerKind::Gncg => run_gncg(&obj, &prep.h0_diag, &prep.m_start, &opts, &cfg.optimizer.gncg()),
    }?;
    if result.solves != problem.ledger().counts() {
        return Err(Error::Config(format!("{kind}: ledger and run totals disagree")));
    }
    check_accounting(kind, &result.trace, prep.n_sources() as u64)?;
    Ok(result)
}

/// Declared cost of each traced iteration: `2N` for the gradient, `N` per
/// linesearch trial, `2N` per GNCG inner iteration.
pub fn expected_iteration_cost(kind: OptimizerKind, rec: &TraceRecord, n: u64) -> u64 {
    let inner = if kind == OptimizerKind::Gncg { 2 * n * rec.extra as u64 } else { 0 };
    2 * n + n * rec.ls_evals as u64 + inner
}

/// Verifies every trace row against the declared per-operation solve counts.
pub fn check_accounting(kind: OptimizerKind, trace: &[TraceRecord], n: u64) -> Result<()> {
    let start = trace.first().map_or(0, |r| r.solves);
    if start != 2 * n {
        return Err(Error::Config(format!("{kind}: starting gradient cost {start} solves, expected {}", 2 * n)));
    }
    for w in trace.windows(2) {
        let got = w[1].solves - w[0].solves;
        let want = expected_iteration_cost(kind, &w[1], n);
        if got != want {
            return Err(Error::Config(format!("{kind}: iteration {} cost {got} solves, expected {want}", w[1].iter)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub optimizer: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub iterations: usize,
    pub solves: u64,
    pub forward: u64,
    pub adjoint: u64,
    pub born: u64,
    pub objective: f64,
    pub grad_norm: f64,
    pub model_error: f64,
    pub relative_model_error: f64,
    pub trace_file: String,
    pub model_file: String,
}

#[derive(Debug, Clone, Serialize)]
struct Derived {
    lambda: f64,
    nu: f64,
    mu: f64,
    h0_min: f64,
    h0_max: f64,
    substeps: usize,
    setup_forward: u64,
    setup_adjoint: u64,
    setup_born: u64,
    source_cells: Vec<[usize; 2]>,
    receiver_cells: Vec<[usize; 2]>,
    target_norm: f64,
    version: &'static str,
}

fn derived(prep: &Prepared) -> Result<Derived> {
    let grid = prep.grid();
    let snap = |x: f64, y: f64| grid.snap(x, y).map(|(a, b)| [a, b]);
    Ok(Derived {
        lambda: prep.reg.lambda(),
        nu: prep.reg.nu(),
        mu: prep.reg.mu(),
        h0_min: prep.h0_diag.iter().cloned().fold(f64::INFINITY, f64::min),
        h0_max: prep.h0_diag.iter().cloned().fold(0.0, f64::max),
        substeps: crate::wave::cfl_substeps(&ModelGrid::new(grid.nx, grid.ny, prep.m_start.clone())?, grid)?,
        setup_forward: prep.setup_solves.forward,
        setup_adjoint: prep.setup_solves.adjoint,
        setup_born: prep.setup_solves.born,
        source_cells: prep.geometry().sources.iter().map(|s| snap(s.x, s.y)).collect::<Result<_>>()?,
        receiver_cells: prep.geometry().receivers.iter().map(|&(x, y)| snap(x, y)).collect::<Result<_>>()?,
        target_norm: norm(&prep.target.model.values),
        version: env!("CARGO_PKG_VERSION"),
    })
}

fn summarize(prep: &Prepared, kind: OptimizerKind, outcome: &Result<RunResult>) -> RunSummary {
    let tnorm = norm(&prep.target.model.values);
    let files = (format!("{kind}_trace.csv"), format!("{kind}_model.modl"));
    match outcome {
        Ok(r) => {
            let last = r.final_record();
            RunSummary {
                optimizer: kind.to_string(),
                status: r.status.to_string(),
                error: None,
                iterations: r.trace.len() - 1,
                solves: r.solves.total(),
                forward: r.solves.forward,
                adjoint: r.solves.adjoint,
                born: r.solves.born,
                objective: last.objective,
                grad_norm: last.grad_norm,
                model_error: last.model_error,
                relative_model_error: if tnorm > 0.0 { last.model_error / tnorm } else { f64::NAN },
                trace_file: files.0,
                model_file: files.1,
            }
        }
        Err(e) => RunSummary {
            optimizer: kind.to_string(),
            status: "failed".into(),
            error: Some(e.to_string()),
            iterations: 0,
            solves: 0,
            forward: 0,
            adjoint: 0,
            born: 0,
            objective: f64::NAN,
            grad_norm: f64::NAN,
            model_error: f64::NAN,
            relative_model_error: f64::NAN,
            trace_file: String::new(),
            model_file: String::new(),
        },
    }
}

/// Outcome of [`run_comparison`].
#[derive(Debug)]
pub struct Comparison {
    pub prepared: Prepared,
    pub runs: Vec<(OptimizerKind, Result<RunResult>)>,
    pub out_dir: PathBuf,
}

impl Comparison {
    pub fn result(&self, kind: OptimizerKind) -> Option<&RunResult> {
        self.runs.iter().find(|(k, _)| *k == kind).and_then(|(_, r)| r.as_ref().ok())
    }
}

fn write_run(out: &Path, cfg: &ExperimentConfig, grid: &SimGrid, kind: OptimizerKind, r: &RunResult) -> Result<()> {
    let f = fs::File::create(out.join(format!("{kind}_trace.csv")))?;
    write_trace_csv(std::io::BufWriter::new(f), &r.trace)?;
    let m = ModelGrid::new(grid.nx, grid.ny, r.model.clone())?;
    write_model(&out.join(format!("{kind}_model.modl")), &m)?;
    write_pgm(&out.join(format!("{kind}_model.pgm")), &m, render_range(cfg))
}

fn write_inputs(out: &Path, prep: &Prepared) -> Result<()> {
    write_model(&out.join("target.modl"), &prep.target.model)?;
    write_pgm(&out.join("target.pgm"), &prep.target.model, render_range(&prep.config))
}

fn write_manifest(out: &Path, prep: &Prepared, summaries: &[RunSummary]) -> Result<()> {
    #[derive(Serialize)]
    struct Extra<'a> {
        derived: Derived,
        results: &'a [RunSummary],
    }
    let mut text = String::from("# Run manifest: the configuration tables reproduce this run.\n");
    text.push_str(&prep.config.to_toml()?);
    text.push('\n');
    let extra = Extra { derived: derived(prep)?, results: summaries };
    text.push_str(&toml::to_string(&extra).map_err(|e| Error::Config(e.to_string()))?);
    fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

/// Generates the data once, runs each listed optimizer from the start model
/// with its own ledger and writes traces, models, renders and a manifest.
/// A failing optimizer is recorded and the others still run.
pub fn run_comparison(cfg: &ExperimentConfig, out: &Path) -> Result<Comparison> {
    run_selected(cfg, &cfg.optimizer.list, out)
}

pub fn run_selected(cfg: &ExperimentConfig, kinds: &[OptimizerKind], out: &Path) -> Result<Comparison> {
    let prep = prepare(cfg)?;
    fs::create_dir_all(out)?;
    write_inputs(out, &prep)?;
    let mut runs = Vec::with_capacity(kinds.len());
    let mut summaries = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let r = run_optimizer(&prep, kind);
        match &r {
            Ok(res) => {
                write_run(out, cfg, prep.grid(), kind, res)?;
                let last = res.final_record();
                info!("{kind}: {} after {} solves, model error {:.4e}", res.status, res.solves.total(), last.model_error);
            }
            Err(e) => warn!("{kind} failed: {e}"),
        }
        summaries.push(summarize(&prep, kind, &r));
        runs.push((kind, r));
    }
    write_manifest(out, &prep, &summaries)?;
    Ok(Comparison { prepared: prep, runs, out_dir: out.to_path_buf() })
}

/// Writes target, geometry and data for inspection.
pub fn write_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ledger = SolveLedger::new();
    let (target, geometry, data) = make_data(cfg, &ledger)?;
    fs::create_dir_all(out)?;
    data.save(&out.join("data"), &cfg.grid, &geometry)?;
    write_model(&out.join("target.modl"), &target.model)?;
    write_pgm(&out.join("target.pgm"), &target.model, render_range(cfg))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// `‖a − b‖ / ‖b‖`
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    norm(&sub(a, b)) / norm(b)
}

/// Sets the worker count for per-source parallelism. Only the first call has
/// an effect.
#[cfg(feature = "parallel")]
pub fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Without the `parallel` feature everything already runs on one thread.
#[cfg(not(feature = "parallel"))]
pub fn set_threads(_n: usize) -> Result<()> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::RunStatus;

    fn small() -> ExperimentConfig {
        let grid = SimGrid { nx: 24, ny: 24, nt: 50, boundary_width: 8, ..SimGrid::default() };
        let mut c = ExperimentConfig { grid, ..ExperimentConfig::default() };
        c.geometry.kind = GeometryKind::Uniform;
        c.geometry.n_sources = 2;
        c.geometry.n_receivers = 6;
        c.optimizer.budget = 30;
        c
    }

    #[test]
    fn comparison_writes_artifacts_and_isolates_ledgers() {
        let dir = tempfile::tempdir().unwrap();
        let cmp = run_comparison(&small(), dir.path()).unwrap();
        for kind in OptimizerKind::ALL {
            let r = cmp.result(kind).unwrap();
            assert_eq!(r.status, RunStatus::BudgetExhausted);
            assert!(r.solves.total() > 30 && r.solves.total() < 30 + 40);
            for f in ["trace.csv", "model.modl", "model.pgm"] {
                assert!(dir.path().join(format!("{kind}_{f}")).exists());
            }
        }
        assert_eq!(cmp.prepared.setup_solves.forward, 4);
        let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        let again = ExperimentConfig::from_toml(&manifest, None).unwrap();
        assert_eq!(again, small());
        assert!(manifest.contains("[derived]") && manifest.contains("[[results]]"));
    }

    #[test]
    fn stationary_start_at_the_truth() {
        let mut c = small();
        c.data.sigma = 0.0;
        c.optimizer.start = StartModel::Truth;
        let prep = prepare(&c).unwrap();
        for kind in OptimizerKind::ALL {
            let r = run_optimizer(&prep, kind).unwrap();
            let first = &r.trace[0];
            assert!(first.objective <= 1e-20, "{kind}: {}", first.objective);
            assert!(first.grad_norm <= 1e-10, "{kind}: {}", first.grad_norm);
            assert!(first.model_error == 0.0);
        }
    }

    #[test]
    fn accounting_check_catches_mismatches() {
        let rec = |iter, solves, ls, extra| TraceRecord {
            iter,
            solves,
            objective: 1.0,
            grad_norm: 1.0,
            model_error: 0.0,
            step: 1.0,
            ls_evals: ls,
            extra,
        };
        let good = [rec(0, 8, 0, f64::NAN), rec(1, 8 + 20, 3, 2.0)];
        assert!(check_accounting(OptimizerKind::Gogn, &good, 4).is_ok());
        assert!(check_accounting(OptimizerKind::Gncg, &good, 4).is_err());
        let gncg = [rec(0, 8, 0, f64::NAN), rec(1, 8 + 8 + 4 + 16, 1, 2.0)];
        assert!(check_accounting(OptimizerKind::Gncg, &gncg, 4).is_ok());
    }
}
