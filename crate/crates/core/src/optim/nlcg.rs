//! Preconditioned nonlinear conjugate gradients (Polak-Ribière+).

use crate::error::Result;
use crate::linalg::{dot, BandedCholesky};
use crate::problem::DataMisfit;

use super::{drive, Direction, Method, Objective, OptimizerKind, Point, RunOptions, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NlcgOptions {}

struct Nlcg {
    precond: BandedCholesky,
    /// `(∇F, z, p)` of the previous iterate.
    prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    z: Vec<f64>,
    p: Vec<f64>,
}

impl<'a, P: DataMisfit + 'a> Method<'a, P> for Nlcg {
    const KIND: OptimizerKind = OptimizerKind::Nlcg;

    fn direction(&mut self, _obj: &Objective<'a, P>, x: &Point<'a, P>, _used: &dyn Fn() -> u64) -> Result<Direction> {
        let z = self.precond.solve(&x.grad);
        let mut beta = 0.0;
        if let Some((g_prev, z_prev, p_prev)) = &self.prev {
            let num: f64 = x.grad.iter().zip(g_prev).zip(&z).map(|((g, gp), zi)| (g - gp) * zi).sum();
            beta = (num / dot(g_prev, z_prev)).max(0.0);
            let p: Vec<f64> = z.iter().zip(p_prev).map(|(zi, pi)| -zi + beta * pi).collect();
            if dot(&p, &x.grad) < 0.0 {
                self.z = z;
                self.p = p.clone();
                return Ok(Direction { p, extra: beta });
            }
            beta = 0.0;
        }
        let p: Vec<f64> = z.iter().map(|v| -v).collect();
        self.z = z;
        self.p = p.clone();
        Ok(Direction { p, extra: beta })
    }

    fn accepted(&mut self, old: &Point<'a, P>, _new: &Point<'a, P>, _alpha: f64, _p: &[f64]) {
        self.prev = Some((old.grad.clone(), std::mem::take(&mut self.z), std::mem::take(&mut self.p)));
    }
}

/// NLCG preconditioned by `H₀ + DᵀD`, with `H₀` a positive diagonal.
/// `extra` in the trace is `β`.
pub fn run_nlcg<P: DataMisfit>(
    obj: &Objective<'_, P>,
    h0_diag: &[f64],
    m0: &[f64],
    opts: &RunOptions,
    _nlcg: &NlcgOptions,
) -> Result<RunResult> {
    let precond = obj.reg.factor_shifted(h0_diag)?;
    drive(obj, Nlcg { precond, prev: None, z: Vec::new(), p: Vec::new() }, m0, opts)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{Budget, InitialStep};
    use super::*;
    use crate::linalg::rel_diff;

    #[test]
    fn first_step_is_preconditioned_steepest_descent() {
        let (lm, reg) = linear_problem(4, 5, 2, 3, 0.4, 1);
        let obj = Objective::new(&lm, &reg).unwrap();
        let h0 = vec![0.7; 20];
        let x = obj.evaluate(vec![0.0; 20], false).unwrap();
        let mut m = Nlcg { precond: reg.factor_shifted(&h0).unwrap(), prev: None, z: vec![], p: vec![] };
        let d = <Nlcg as Method<_>>::direction(&mut m, &obj, &x, &|| 0).unwrap();
        let sd: Vec<f64> = reg.factor_shifted(&h0).unwrap().solve(&x.grad).iter().map(|v| -v).collect();
        assert!(rel_diff(&d.p, &sd) < 1e-15);
        assert_eq!(d.extra, 0.0);
    }

    #[test]
    fn converges_on_a_convex_quadratic() {
        // 50 unknowns; exact line minimization makes this linear PCG
        let (lm, reg) = linear_problem(5, 10, 3, 6, 0.3, 4);
        let obj = Objective::new(&lm, &reg).unwrap();
        let h0 = vec![0.5; 50];
        let opts = RunOptions::new(Budget { max_solves: u64::MAX }, exact_policy(InitialStep::Unit))
            .with_grad_tol(1e-8)
            .with_max_iters(50);
        let r = run_nlcg(&obj, &h0, &vec![0.0; 50], &opts, &NlcgOptions::default()).unwrap();
        assert!(r.final_record().grad_norm <= 1e-8, "{} after {} iterations", r.final_record().grad_norm, r.trace.len() - 1);
        assert_monotone(&r);
    }
}
