//! Limited-memory BFGS with an `H₀ + DᵀD` initial inverse and a smoothing
//! pass on every direction.

use std::collections::VecDeque;

use log::debug;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, sub, BandedCholesky};
use crate::problem::DataMisfit;

use super::{drive, Direction, Method, Objective, OptimizerKind, Point, RunOptions, RunResult};

/// Pairs with `sᵀy ≤ CURVATURE_SKIP · ‖s‖‖y‖` are not stored.
pub const CURVATURE_SKIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Post-multiply each direction by `(λν)² (DᵀD)⁻¹`.
    pub smoothing: bool,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { memory: 10, smoothing: true }
    }
}

/// Curvature pairs and the two-loop recursion.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        LbfgsMemory { capacity, pairs: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores `(s, y)` unless its curvature is too small. Returns whether it
    /// was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > CURVATURE_SKIP * norm(&s) * norm(&y)) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `H q` with `h0` applying the initial inverse.
    pub fn apply(&self, q: &[f64], h0: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut q = q.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas.push(a);
        }
        let mut r = h0(&q);
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            axpy(a - b, s, &mut r);
        }
        r
    }
}

struct Lbfgs {
    init: BandedCholesky,
    memory: LbfgsMemory,
    smoothing: bool,
}

impl<'a, P: DataMisfit + 'a> Method<'a, P> for Lbfgs {
    const KIND: OptimizerKind = OptimizerKind::Lbfgs;

    fn direction(&mut self, obj: &Objective<'a, P>, x: &Point<'a, P>, _used: &dyn Fn() -> u64) -> Result<Direction> {
        let g = &x.grad;
        let raw: Vec<f64> = self.memory.apply(g, |q| self.init.solve(q)).iter().map(|v| -v).collect();
        let mut candidates = Vec::with_capacity(3);
        if self.smoothing {
            let mut s = obj.reg.solve_normal(&raw);
            let mu = obj.reg.mu();
            s.iter_mut().for_each(|v| *v *= mu);
            candidates.push(s);
        }
        candidates.push(raw);
        for p in candidates {
            if dot(&p, g) < 0.0 {
                return Ok(Direction { p, extra: self.memory.len() as f64 });
            }
            debug!("LBFGS candidate direction is not a descent direction");
        }
        self.memory.clear();
        let p = self.init.solve(g).iter().map(|v| -v).collect();
        Ok(Direction { p, extra: 0.0 })
    }

    fn accepted(&mut self, old: &Point<'a, P>, new: &Point<'a, P>, _alpha: f64, _p: &[f64]) {
        if !self.memory.push(sub(&new.m, &old.m), sub(&new.grad, &old.grad)) {
            debug!("LBFGS skipped a pair with insufficient curvature");
        }
    }
}

/// `extra` in the trace is the number of stored pairs used for the step.
pub fn run_lbfgs<P: DataMisfit>(
    obj: &Objective<'_, P>,
    h0_diag: &[f64],
    m0: &[f64],
    opts: &RunOptions,
    lbfgs: &LbfgsOptions,
) -> Result<RunResult> {
    if lbfgs.memory == 0 {
        return Err(Error::Config("LBFGS memory must be at least 1".into()));
    }
    let init = obj.reg.factor_shifted(h0_diag)?;
    drive(obj, Lbfgs { init, memory: LbfgsMemory::new(lbfgs.memory), smoothing: lbfgs.smoothing }, m0, opts)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{Budget, InitialStep};
    use super::*;
    use crate::linalg::rel_diff;

    #[test]
    fn zero_curvature_pair_is_skipped() {
        let mut m = LbfgsMemory::new(3);
        assert!(!m.push(vec![1.0, 0.0], vec![0.0, 1.0]));
        assert!(m.is_empty());
        assert!(m.push(vec![1.0, 0.0], vec![2.0, 0.0]));
        assert_eq!(m.len(), 1);
        for _ in 0..5 {
            m.push(vec![1.0, 1.0], vec![1.0, 2.0]);
        }
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn two_loop_satisfies_secant_condition() {
        let mut m = LbfgsMemory::new(5);
        m.push(vec![1.0, 0.5, 0.0], vec![2.0, 0.3, 0.1]);
        m.push(vec![0.0, 1.0, -1.0], vec![0.1, 1.5, -0.7]);
        let y = vec![0.1, 1.5, -0.7];
        let hy = m.apply(&y, |q| q.to_vec());
        assert!(rel_diff(&hy, &[0.0, 1.0, -1.0]) < 1e-14);
    }

    #[test]
    fn first_step_is_smoothed_preconditioned_descent() {
        let (lm, reg) = linear_problem(4, 4, 2, 3, 0.4, 3);
        let obj = Objective::new(&lm, &reg).unwrap();
        let h0 = vec![1.3; 16];
        let x = obj.evaluate(vec![0.0; 16], false).unwrap();
        let mut m = Lbfgs { init: reg.factor_shifted(&h0).unwrap(), memory: LbfgsMemory::new(10), smoothing: false };
        let d = <Lbfgs as Method<_>>::direction(&mut m, &obj, &x, &|| 0).unwrap();
        let sd: Vec<f64> = reg.factor_shifted(&h0).unwrap().solve(&x.grad).iter().map(|v| -v).collect();
        assert!(rel_diff(&d.p, &sd) < 1e-15);
        m.smoothing = true;
        let d = <Lbfgs as Method<_>>::direction(&mut m, &obj, &x, &|| 0).unwrap();
        let mut smooth = reg.solve_normal(&sd);
        smooth.iter_mut().for_each(|v| *v *= reg.mu());
        assert!(rel_diff(&d.p, &smooth) < 1e-15);
    }

    #[test]
    fn converges_on_a_convex_quadratic() {
        let (lm, reg) = linear_problem(10, 10, 4, 8, 0.3, 6);
        let obj = Objective::new(&lm, &reg).unwrap();
        let opts = RunOptions::new(Budget { max_solves: u64::MAX }, exact_policy(InitialStep::Unit))
            .with_grad_tol(1e-6)
            .with_max_iters(200);
        let plain = LbfgsOptions { smoothing: false, ..LbfgsOptions::default() };
        let r = run_lbfgs(&obj, &vec![0.5; 100], &vec![0.0; 100], &opts, &plain).unwrap();
        assert!(r.final_record().grad_norm <= 1e-6, "{:?}", r.final_record());
        assert_monotone(&r);

        // smoothing breaks the secant structure; it must still descend
        let r = run_lbfgs(&obj, &vec![0.5; 100], &vec![0.0; 100], &opts, &LbfgsOptions::default()).unwrap();
        assert_monotone(&r);
        assert!(r.final_record().grad_norm < 1e-1 * r.trace[0].grad_norm);
    }
}
