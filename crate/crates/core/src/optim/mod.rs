//! Optimizers over `F(m) = Σᵢ φᵢ(m) + R(m)` under a PDE-solve budget.
//!
//! All four methods share one outer loop ([`drive`]): evaluate the gradient,
//! record a trace row, stop if the budget is spent, pick a direction, search
//! along it. They differ only in how the direction is built.

mod gncg;
mod gogn;
mod lbfgs;
pub mod linesearch;
mod nlcg;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use gncg::{run_gncg, GncgOptions, GncgPreconditioner, Richardson};
pub use gogn::{run_gogn, GognOptions};
pub use lbfgs::{run_lbfgs, LbfgsMemory, LbfgsOptions};
pub use linesearch::{InitialStep, LinesearchOutcome, LinesearchPolicy, SearchMode};
pub use nlcg::{run_nlcg, NlcgOptions};

use crate::error::{Error, Result};
use crate::ledger::SolveCounts;
use crate::linalg::{axpy, dot, norm, sub};
use crate::problem::{DataMisfit, MisfitReport};
use crate::regularizer::SmoothingOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gogn,
    Nlcg,
    Lbfgs,
    Gncg,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [OptimizerKind::Gogn, OptimizerKind::Nlcg, OptimizerKind::Lbfgs, OptimizerKind::Gncg];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Gogn => "gogn",
            OptimizerKind::Nlcg => "nlcg",
            OptimizerKind::Lbfgs => "lbfgs",
            OptimizerKind::Gncg => "gncg",
        }
    }

    /// GNCG tries the unit step first; everyone else caps the first trial.
    pub fn default_policy(&self) -> LinesearchPolicy {
        match self {
            OptimizerKind::Gncg => LinesearchPolicy::unit(),
            _ => LinesearchPolicy::default(),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

/// Cap on forward + adjoint + Born solves. A run stops at the start of the
/// first iteration after the count exceeds `max_solves`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_solves: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_solves: 100 }
    }
}

impl Budget {
    pub fn exhausted(&self, used: u64) -> bool {
        used > self.max_solves
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub budget: Budget,
    pub policy: LinesearchPolicy,
    /// Used only for the model-error column.
    pub m_true: Option<Vec<f64>>,
    /// Stop once `‖∇F‖` drops to this value.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl RunOptions {
    pub fn new(budget: Budget, policy: LinesearchPolicy) -> Self {
        RunOptions { budget, policy, m_true: None, grad_tol: 0.0, max_iters: 100_000 }
    }

    pub fn with_truth(mut self, m_true: Vec<f64>) -> Self {
        self.m_true = Some(m_true);
        self
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Cumulative solves since the run started.
    pub solves: u64,
    pub objective: f64,
    pub grad_norm: f64,
    /// `‖m_true − m‖`, NaN without a reference model.
    pub model_error: f64,
    pub step: f64,
    pub ls_evals: usize,
    /// Optimizer-specific diagnostic.
    pub extra: f64,
}

pub const TRACE_HEADER: &str = "iter,solves,objective,grad_norm,model_error,step,ls_evals,extra";

impl TraceRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{},{:e}",
            self.iter, self.solves, self.objective, self.grad_norm, self.model_error, self.step, self.ls_evals, self.extra
        )
    }
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceRecord]) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    BudgetExhausted,
    Converged,
    /// The linesearch found no decrease.
    Stalled,
    MaxIterations,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::BudgetExhausted => "budget_exhausted",
            RunStatus::Converged => "converged",
            RunStatus::Stalled => "stalled",
            RunStatus::MaxIterations => "max_iterations",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub optimizer: OptimizerKind,
    pub trace: Vec<TraceRecord>,
    pub model: Vec<f64>,
    pub status: RunStatus,
    pub solves: SolveCounts,
}

impl RunResult {
    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("trace always holds the starting point")
    }
}

/// `F = Σ φᵢ + R` on top of a misfit and a regularizer.
pub struct Objective<'a, P> {
    pub problem: &'a P,
    pub reg: &'a SmoothingOperator,
}

impl<'a, P: DataMisfit> Objective<'a, P> {
    pub fn new(problem: &'a P, reg: &'a SmoothingOperator) -> Result<Self> {
        if problem.n_params() != reg.dim() {
            return Err(Error::shape(format!(
                "misfit has {} parameters, regularizer {}",
                problem.n_params(),
                reg.dim()
            )));
        }
        Ok(Objective { problem, reg })
    }

    /// `F(m)`; `+∞` outside the admissible set or when the solver blows up.
    pub fn value(&self, m: &[f64]) -> Result<f64> {
        if !self.problem.admissible(m) {
            return Ok(f64::INFINITY);
        }
        match self.problem.misfit_only(m) {
            Ok(v) => Ok(v.total + self.reg.value(m)),
            Err(e) if e.is_numerical() => {
                warn!("trial model rejected: {e}");
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e),
        }
    }

    fn evaluate(&self, m: Vec<f64>, linearize: bool) -> Result<Point<'a, P>> {
        let (report, lin) = if linearize {
            let (r, l) = self.problem.linearize(&m)?;
            (r, Some(l))
        } else {
            (self.problem.misfit_and_gradients(&m)?, None)
        };
        let mut grad = report.total_gradient();
        axpy(1.0, &self.reg.grad(&m), &mut grad);
        let f = report.total + self.reg.value(&m);
        Ok(Point { m, f, grad, report, lin })
    }
}

/// An evaluated iterate.
pub struct Point<'a, P: DataMisfit + 'a> {
    pub m: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub report: MisfitReport,
    /// Kept only for methods that need Hessian products.
    pub lin: Option<P::Linearized<'a>>,
}

pub(crate) struct Direction {
    pub p: Vec<f64>,
    pub extra: f64,
}

pub(crate) trait Method<'a, P: DataMisfit + 'a> {
    const KIND: OptimizerKind;

    fn needs_linearization(&self) -> bool {
        false
    }

    /// Search direction at `x`; `used` is the run's solve count so far.
    fn direction(&mut self, obj: &Objective<'a, P>, x: &Point<'a, P>, used: &dyn Fn() -> u64) -> Result<Direction>;

    /// Called after a step from `old` to `new` is accepted.
    fn accepted(&mut self, _old: &Point<'a, P>, _new: &Point<'a, P>, _alpha: f64, _p: &[f64]) {}
}

pub(crate) fn drive<'a, P, M>(
    obj: &Objective<'a, P>,
    mut method: M,
    m0: &[f64],
    opts: &RunOptions,
) -> Result<RunResult>
where
    P: DataMisfit + 'a,
    M: Method<'a, P>,
{
    opts.policy.validate()?;
    if m0.len() != obj.reg.dim() {
        return Err(Error::shape("starting model has the wrong length"));
    }
    let ledger = obj.problem.ledger();
    let start = ledger.counts();
    let used = || ledger.counts().since(start).total();
    let model_error = |m: &[f64]| opts.m_true.as_ref().map_or(f64::NAN, |t| norm(&sub(t, m)));

    let mut x = obj.evaluate(m0.to_vec(), method.needs_linearization())?;
    let mut trace = vec![TraceRecord {
        iter: 0,
        solves: used(),
        objective: x.f,
        grad_norm: norm(&x.grad),
        model_error: model_error(&x.m),
        step: 0.0,
        ls_evals: 0,
        extra: f64::NAN,
    }];

    let status = loop {
        let iter = trace.len();
        if opts.budget.exhausted(used()) {
            break RunStatus::BudgetExhausted;
        }
        if norm(&x.grad) <= opts.grad_tol {
            break RunStatus::Converged;
        }
        if iter > opts.max_iters {
            break RunStatus::MaxIterations;
        }
        let dir = method.direction(obj, &x, &used)?;
        let g0 = dot(&x.grad, &dir.p);
        if !(g0 < 0.0) {
            warn!("{}: iteration {iter} produced no descent direction (slope {g0:e})", M::KIND);
            break RunStatus::Stalled;
        }
        let alpha0 = opts.policy.initial_step.alpha(&dir.p);
        let trial = |a: f64| {
            let mut m = x.m.clone();
            axpy(a, &dir.p, &mut m);
            obj.value(&m)
        };
        let ls = linesearch::search(trial, x.f, g0, alpha0, &opts.policy)?;
        let Some(alpha) = ls.alpha else {
            warn!("{}: linesearch found no decrease at iteration {iter}", M::KIND);
            break RunStatus::Stalled;
        };
        let mut m = x.m.clone();
        axpy(alpha, &dir.p, &mut m);
        let next = obj.evaluate(m, method.needs_linearization())?;
        method.accepted(&x, &next, alpha, &dir.p);
        x = next;
        trace.push(TraceRecord {
            iter,
            solves: used(),
            objective: x.f,
            grad_norm: norm(&x.grad),
            model_error: model_error(&x.m),
            step: alpha,
            ls_evals: ls.evals,
            extra: dir.extra,
        });
        info!("{} iter {iter}: F = {:.6e}, |g| = {:.3e}, {} solves", M::KIND, x.f, norm(&x.grad), used());
    };
    Ok(RunResult { optimizer: M::KIND, trace, model: x.m, status, solves: ledger.counts().since(start) })
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::problem::LinearMisfit;
    use crate::regularizer::Boundary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random linear least-squares problem on an `nx × ny` grid with `n`
    /// terms of `rows` rows each.
    pub fn linear_problem(nx: usize, ny: usize, n: usize, rows: usize, lambda: f64, seed: u64) -> (LinearMisfit, SmoothingOperator) {
        let p = nx * ny;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..n).map(|_| (0..rows * p).map(|_| rng.random_range(-1.0..1.0) / (p as f64).sqrt()).collect()).collect();
        let rhs = (0..n).map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let lm = LinearMisfit::new(p, blocks, rhs).unwrap();
        let reg = SmoothingOperator::build(nx, ny, 1.0, lambda, 0.5, vec![0.0; p], Boundary::Neumann).unwrap();
        (lm, reg)
    }

    pub fn exact_policy(initial: InitialStep) -> LinesearchPolicy {
        LinesearchPolicy { mode: SearchMode::Exact, initial_step: initial, ..LinesearchPolicy::default() }
    }

    pub fn assert_monotone(r: &RunResult) {
        for w in r.trace.windows(2) {
            assert!(w[1].objective < w[0].objective, "{}: F rose at iteration {}", r.optimizer, w[1].iter);
            assert!(w[1].solves > w[0].solves);
        }
    }
}
