//! Outer loop around the gradient-only Gauss-Newton step.

use crate::error::{Error, Result};
use crate::gogn::{assemble, step_woodbury};
use crate::problem::DataMisfit;

use super::{drive, Direction, Method, Objective, OptimizerKind, Point, RunOptions, RunResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GognOptions {
    /// Terms with `φᵢ ≤ eps_phi` are left out of the Jacobian.
    pub eps_phi: f64,
}

impl Default for GognOptions {
    fn default() -> Self {
        GognOptions { eps_phi: 0.0 }
    }
}

struct Gogn {
    eps_phi: f64,
}

impl<'a, P: DataMisfit + 'a> Method<'a, P> for Gogn {
    const KIND: OptimizerKind = OptimizerKind::Gogn;

    fn direction(&mut self, obj: &Objective<'a, P>, x: &Point<'a, P>, _used: &dyn Fn() -> u64) -> Result<Direction> {
        let j = assemble(&x.report, self.eps_phi);
        let step = step_woodbury(&j, &x.m, obj.reg)?;
        if step.degenerate {
            log::warn!("GOGN: every misfit term vanished; taking the regularization step");
        }
        Ok(Direction { p: step.direction, extra: step.cond_estimate })
    }
}

/// Each iteration costs one gradient evaluation (`2N` solves) plus the
/// linesearch; the step itself needs none.
pub fn run_gogn<P: DataMisfit>(
    obj: &Objective<'_, P>,
    m0: &[f64],
    opts: &RunOptions,
    gogn: &GognOptions,
) -> Result<RunResult> {
    if !(gogn.eps_phi >= 0.0) {
        return Err(Error::Config("eps_phi must be non-negative".into()));
    }
    drive(obj, Gogn { eps_phi: gogn.eps_phi }, m0, opts)
}
