//! Gradient-only Gauss-Newton step.
//!
//! Writing each misfit term as `φᵢ = ½ρᵢ²` with `ρᵢ = √(2φᵢ)` gives
//! `∇ρᵢ = ∇φᵢ / ρᵢ`, so the Jacobian of the residual-norm vector `ρ` is built
//! from gradients the optimizer already has. The Gauss-Newton system
//! `(JᵀJ + DᵀD) p = −∇F` then has a rank-`N` data part and is solved with the
//! Woodbury identity: `N` regularizer solves plus one `N × N` dense solve.

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, map_indices, sub};
use crate::problem::MisfitReport;
use crate::regularizer::SmoothingOperator;

/// Largest parameter count accepted by the dense paths.
pub const DENSE_LIMIT: usize = 2000;

/// Rows `∇φᵢ / √(2φᵢ)` and residual norms `ρᵢ = √(2φᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GoJacobian {
    pub rows: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    /// Rows with `φᵢ ≤ eps_phi` are zero and excluded from the solve.
    pub active: Vec<bool>,
}

/// Builds the Jacobian from per-term misfits and gradients. No PDE solves.
pub fn assemble(report: &MisfitReport, eps_phi: f64) -> GoJacobian {
    let p = report.gradients.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(report.phi.len());
    let mut rho = Vec::with_capacity(report.phi.len());
    let mut active = Vec::with_capacity(report.phi.len());
    for (phi, g) in report.phi.iter().zip(&report.gradients) {
        let r = (2.0 * phi.max(0.0)).sqrt();
        if *phi > eps_phi && r > 0.0 {
            rows.push(g.iter().map(|x| x / r).collect());
            active.push(true);
        } else {
            rows.push(vec![0.0; p]);
            active.push(false);
        }
        rho.push(r);
    }
    GoJacobian { rows, rho, active }
}

impl GoJacobian {
    pub fn n_terms(&self) -> usize {
        self.rows.len()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn active_rows(&self) -> Vec<usize> {
        (0..self.n_terms()).filter(|&i| self.active[i]).collect()
    }

    /// `J v`
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, v)).collect()
    }

    /// `Jᵀ c`
    pub fn apply_t(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (r, ci) in self.rows.iter().zip(c) {
            axpy(*ci, r, &mut out);
        }
        out
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, r).sqrt()).collect()
    }

    /// `∇F = Jᵀρ + DᵀD(m − m₀)`.
    pub fn objective_gradient(&self, m: &[f64], reg: &SmoothingOperator) -> Vec<f64> {
        let mut g = reg.grad(m);
        axpy(1.0, &self.apply_t(&self.rho), &mut g);
        g
    }

    fn check(&self, m: &[f64], reg: &SmoothingOperator) -> Result<()> {
        if m.len() != reg.dim() || (self.n_terms() > 0 && self.dim() != reg.dim()) {
            return Err(Error::shape(format!(
                "Jacobian has {} columns, model {} entries, regularizer {} unknowns",
                self.dim(),
                m.len(),
                reg.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GognStep {
    pub direction: Vec<f64>,
    /// Size of the dense system actually solved.
    pub n_small: usize,
    /// Condition number of `I + J A Jᵀ` (1 for the degenerate step).
    pub cond_estimate: f64,
    /// `∇Fᵀ p`
    pub directional_derivative: f64,
    /// No active rows: the step is the pure regularization pull `m₀ − m`.
    pub degenerate: bool,
}

fn finish(direction: Vec<f64>, j: &GoJacobian, m: &[f64], reg: &SmoothingOperator, n_small: usize, cond: f64) -> GognStep {
    let g = j.objective_gradient(m, reg);
    GognStep {
        directional_derivative: dot(&g, &direction),
        direction,
        n_small,
        cond_estimate: cond,
        degenerate: n_small == 0,
    }
}

/// `p = A Jᵀ (I + J A Jᵀ)⁻¹ (J(m − m₀) − ρ) − (m − m₀)` with `A = (DᵀD)⁻¹`.
pub fn step_woodbury(j: &GoJacobian, m: &[f64], reg: &SmoothingOperator) -> Result<GognStep> {
    j.check(m, reg)?;
    let delta = sub(m, reg.reference());
    let idx = j.active_rows();
    let n = idx.len();
    if n == 0 {
        let p = delta.iter().map(|d| -d).collect();
        return Ok(finish(p, j, m, reg, 0, 1.0));
    }
    let ajt: Vec<Vec<f64>> = map_indices(n, |k| reg.solve_normal(&j.rows[idx[k]]));
    let small = DMatrix::from_fn(n, n, |a, b| {
        let v = 0.5 * (dot(&j.rows[idx[a]], &ajt[b]) + dot(&j.rows[idx[b]], &ajt[a]));
        if a == b {
            1.0 + v
        } else {
            v
        }
    });
    let cond = condition_number(&small);
    let rhs = DVector::from_fn(n, |k, _| dot(&j.rows[idx[k]], &delta) - j.rho[idx[k]]);
    let chol = small.clone().cholesky().ok_or_else(|| {
        Error::Linalg(format!("I + J A Jᵀ ({n}x{n}) is not positive definite; condition estimate {cond:e}"))
    })?;
    let c = chol.solve(&rhs);
    let mut p: Vec<f64> = delta.iter().map(|d| -d).collect();
    for (k, a) in ajt.iter().enumerate() {
        axpy(c[k], a, &mut p);
    }
    debug!("GOGN step: {n} active rows, condition {cond:.3e}");
    Ok(finish(p, j, m, reg, n, cond))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Dense `JᵀJ + DᵀD`.
pub fn dense_hessian(j: &GoJacobian, reg: &SmoothingOperator) -> Result<DMatrix<f64>> {
    let p = reg.dim();
    if p > DENSE_LIMIT {
        return Err(Error::invalid(format!("dense GOGN path limited to {DENSE_LIMIT} parameters, got {p}")));
    }
    let mut h = reg.normal_matrix().to_dense();
    for r in &j.rows {
        let v = DVector::from_column_slice(r);
        h += &v * v.transpose();
    }
    Ok(h)
}

/// Forms `JᵀJ + DᵀD` explicitly and solves for `−∇F`. Small problems only.
pub fn step_dense_oracle(j: &GoJacobian, m: &[f64], reg: &SmoothingOperator) -> Result<GognStep> {
    j.check(m, reg)?;
    let h = dense_hessian(j, reg)?;
    let g = DVector::from_vec(j.objective_gradient(m, reg));
    let chol = h.clone().cholesky().ok_or_else(|| Error::Linalg("dense GOGN Hessian not SPD".into()))?;
    let p = -chol.solve(&g);
    let n = j.n_active();
    let cond = if n == 0 {
        1.0
    } else {
        let idx = j.active_rows();
        let ajt: Vec<Vec<f64>> = idx.iter().map(|&i| reg.solve_normal(&j.rows[i])).collect();
        condition_number(&DMatrix::from_fn(n, n, |a, b| {
            (a == b) as u8 as f64 + dot(&j.rows[idx[a]], &ajt[b])
        }))
    };
    Ok(finish(p.as_slice().to_vec(), j, m, reg, n, cond))
}

/// Spectral constants of the descent bound: `μ = (λν)²`, `M = λ_max(DᵀD)`,
/// `M_J = λ_max(JᵀJ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    pub mu: f64,
    pub m_reg: f64,
    pub m_jac: f64,
}

impl SpectralBounds {
    /// Lower bound `μ / (M + M_J)` on the cosine between `p` and `−∇F`.
    pub fn cos_bound(&self) -> f64 {
        self.mu / (self.m_reg + self.m_jac)
    }
}

/// Computes [`SpectralBounds`] from dense eigendecompositions.
pub fn spectral_bounds(j: &GoJacobian, reg: &SmoothingOperator) -> Result<SpectralBounds> {
    if reg.dim() > DENSE_LIMIT {
        return Err(Error::invalid("spectral bounds need the dense path"));
    }
    let m_reg = SymmetricEigen::new(reg.normal_matrix().to_dense())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let n = j.n_terms();
    let m_jac = if n == 0 {
        0.0
    } else {
        let gram = DMatrix::from_fn(n, n, |a, b| dot(&j.rows[a], &j.rows[b]));
        SymmetricEigen::new(gram).eigenvalues.iter().cloned().fold(0.0, f64::max)
    };
    Ok(SpectralBounds { mu: reg.mu(), m_reg, m_jac })
}
