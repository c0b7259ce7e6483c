//! Inexact Gauss-Newton: each outer step runs a few preconditioned CG
//! iterations on `(J ᵀW²J + DᵀD) p = −∇F` with matrix-free Hessian products.
//!
//! The preconditioner is an L-BFGS-type inverse built from `(v, Hv)` pairs of
//! earlier CG iterations, on top of a fixed number of Richardson sweeps on
//! `H₀ + DᵀD`. It stays fixed during each inner solve, so CG sees a linear
//! operator.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, SymBanded};
use crate::problem::{DataMisfit, GaussNewtonProduct};

use super::lbfgs::LbfgsMemory;
use super::{drive, Direction, Method, Objective, OptimizerKind, Point, RunOptions, RunResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GncgOptions {
    /// Relative residual at which the inner CG stops.
    pub cg_tol: f64,
    pub cg_maxiter: usize,
    pub richardson_iters: usize,
    pub power_iters: usize,
    /// Most recent `(v, Hv)` pairs kept for the preconditioner.
    pub history: usize,
}

impl Default for GncgOptions {
    fn default() -> Self {
        GncgOptions { cg_tol: 0.1, cg_maxiter: 5, richardson_iters: 300, power_iters: 20, history: 20 }
    }
}

/// `x ← x + ω (b − M x)` a fixed number of times from `x = 0`; a linear map
/// of `b` approximating `M⁻¹ b`.
#[derive(Debug, Clone)]
pub struct Richardson {
    matrix: SymBanded,
    omega: f64,
    iters: usize,
}

impl Richardson {
    /// `ω = 1 / λ_max(M)` with `λ_max` from `power_iters` power iterations.
    pub fn new(matrix: SymBanded, iters: usize, power_iters: usize) -> Self {
        let lmax = power_estimate(&matrix, power_iters);
        Richardson { matrix, omega: 1.0 / lmax, iters }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; b.len()];
        for _ in 0..self.iters {
            let mx = self.matrix.matvec(&x);
            for ((xi, bi), mi) in x.iter_mut().zip(b).zip(&mx) {
                *xi += self.omega * (bi - mi);
            }
        }
        x
    }
}

/// Rayleigh quotient after `iters` power iterations from a fixed
/// pseudo-random start.
fn power_estimate(m: &SymBanded, iters: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let mv = m.matvec(&v);
        lambda = dot(&v, &mv);
        v = mv;
    }
    lambda
}

/// Quasi-Newton inverse seeded with [`Richardson`].
#[derive(Debug, Clone)]
pub struct GncgPreconditioner {
    pub seed: Richardson,
    pub memory: LbfgsMemory,
}

impl GncgPreconditioner {
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        self.memory.apply(r, |q| self.seed.apply(q))
    }
}

struct Gncg {
    precond: GncgPreconditioner,
    cg_tol: f64,
    cg_maxiter: usize,
    max_solves: u64,
}

impl<'a, P: DataMisfit + 'a> Method<'a, P> for Gncg {
    const KIND: OptimizerKind = OptimizerKind::Gncg;

    fn needs_linearization(&self) -> bool {
        true
    }

    fn direction(&mut self, obj: &Objective<'a, P>, x: &Point<'a, P>, used: &dyn Fn() -> u64) -> Result<Direction> {
        let lin = x.lin.as_ref().expect("GNCG iterates carry their linearization");
        let hess = |v: &[f64]| -> Result<Vec<f64>> {
            let mut h = lin.apply(v)?;
            axpy(1.0, &obj.reg.hess_vec(v), &mut h);
            Ok(h)
        };
        let b: Vec<f64> = x.grad.iter().map(|g| -g).collect();
        let bnorm = norm(&b);
        let mut sol = vec![0.0; b.len()];
        let mut r = b.clone();
        let mut z = self.precond.apply(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let mut pairs = Vec::new();
        let mut k = 0;
        while k < self.cg_maxiter {
            let hd = hess(&d)?;
            k += 1;
            let curv = dot(&d, &hd);
            if !(curv > 0.0) {
                debug!("GNCG: non-positive curvature {curv:e} at inner iteration {k}");
                if k == 1 {
                    sol = d.clone();
                }
                break;
            }
            let a = rz / curv;
            axpy(a, &d, &mut sol);
            axpy(-a, &hd, &mut r);
            pairs.push((d.clone(), hd));
            if norm(&r) <= self.cg_tol * bnorm || used() > self.max_solves {
                break;
            }
            z = self.precond.apply(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (di, zi) in d.iter_mut().zip(&z) {
                *di = zi + beta * *di;
            }
        }
        for (v, hv) in pairs {
            self.precond.memory.push(v, hv);
        }
        Ok(Direction { p: sol, extra: k as f64 })
    }
}

/// `extra` in the trace is the number of inner CG iterations.
pub fn run_gncg<P: DataMisfit>(
    obj: &Objective<'_, P>,
    h0_diag: &[f64],
    m0: &[f64],
    opts: &RunOptions,
    gncg: &GncgOptions,
) -> Result<RunResult> {
    if !(gncg.cg_tol > 0.0 && gncg.cg_tol < 1.0) {
        return Err(Error::Config("cg_tol must lie in (0, 1)".into()));
    }
    if gncg.cg_maxiter == 0 || gncg.history == 0 {
        return Err(Error::Config("cg_maxiter and history must be at least 1".into()));
    }
    let mut m = obj.reg.normal_matrix().clone();
    m.add_diagonal(h0_diag);
    let precond = GncgPreconditioner {
        seed: Richardson::new(m, gncg.richardson_iters, gncg.power_iters),
        memory: LbfgsMemory::new(gncg.history),
    };
    let method = Gncg { precond, cg_tol: gncg.cg_tol, cg_maxiter: gncg.cg_maxiter, max_solves: opts.budget.max_solves };
    drive(obj, method, m0, opts)
}
