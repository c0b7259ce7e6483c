//! Tikhonov smoothing regularizer `R(m) = ½ ‖D (m − m₀)‖²` with
//! `D = λ (ν I − Δₕ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandedCholesky, SymBanded};

/// Closure of the 5-point Laplacian at the grid edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Zero normal derivative: constants are in the null space of `Δₕ`.
    #[default]
    Neumann,
    /// Zero values outside the grid.
    Dirichlet,
}

/// Correlation length in cells used for the default `ν = 1 / (5h)²`.
pub const DEFAULT_CORRELATION_CELLS: f64 = 5.0;

pub fn default_nu(h: f64) -> f64 {
    1.0 / (DEFAULT_CORRELATION_CELLS * h).powi(2)
}

/// `λ` for which `‖DᵀD‖₂` roughly matches `curvature` (typically the largest
/// entry of the diagonal misfit-Hessian estimate). Uses `8 / h²` as the bound
/// on the spectrum of `−Δₕ`.
pub fn balanced_lambda(curvature: f64, nu: f64, h: f64) -> f64 {
    curvature.max(f64::MIN_POSITIVE).sqrt() / (nu + 8.0 / (h * h))
}

#[derive(Debug, Clone)]
pub struct SmoothingOperator {
    nx: usize,
    ny: usize,
    h: f64,
    lambda: f64,
    nu: f64,
    boundary: Boundary,
    m0: Vec<f64>,
    normal: SymBanded,
    factor: BandedCholesky,
}

impl SmoothingOperator {
    /// Assembles `D`, forms `DᵀD` in banded storage (natural ordering keeps the
    /// half bandwidth at `2 ny`) and factors it once.
    pub fn build(
        nx: usize,
        ny: usize,
        h: f64,
        lambda: f64,
        nu: f64,
        m0: Vec<f64>,
        boundary: Boundary,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::invalid(format!("nu must be positive, got {nu}")));
        }
        if !(h > 0.0) || nx == 0 || ny == 0 {
            return Err(Error::invalid("degenerate regularizer grid"));
        }
        if m0.len() != nx * ny {
            return Err(Error::shape(format!("reference model has {} entries, grid has {}", m0.len(), nx * ny)));
        }
        let mut op = SmoothingOperator {
            nx,
            ny,
            h,
            lambda,
            nu,
            boundary,
            m0,
            normal: SymBanded::zeros(0, 0),
            factor: SymBanded::zeros(0, 0).cholesky()?,
        };
        let p = nx * ny;
        let mut normal = SymBanded::zeros(p, (2 * ny).min(p.saturating_sub(1)));
        for k in 0..p {
            let row = op.d_row(k);
            for &(i, di) in &row {
                for &(j, dj) in &row {
                    if i >= j {
                        normal.add(i, j, di * dj);
                    }
                }
            }
        }
        op.factor = normal.cholesky()?;
        op.normal = normal;
        Ok(op)
    }

    /// Nonzeros of row `k` of `D` (symmetric, so also column `k`).
    fn d_row(&self, k: usize) -> Vec<(usize, f64)> {
        let (ix, iy) = (k / self.ny, k % self.ny);
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut row = Vec::with_capacity(5);
        let mut diag = self.nu;
        let mut push = |row: &mut Vec<(usize, f64)>, inside: bool, idx: usize| {
            if inside {
                row.push((idx, -self.lambda * inv_h2));
                diag += inv_h2;
            } else if self.boundary == Boundary::Dirichlet {
                diag += inv_h2;
            }
        };
        push(&mut row, ix > 0, k.wrapping_sub(self.ny));
        push(&mut row, ix + 1 < self.nx, k + self.ny);
        push(&mut row, iy > 0, k.wrapping_sub(1));
        push(&mut row, iy + 1 < self.ny, k + 1);
        row.push((k, self.lambda * diag));
        row
    }

    pub fn dim(&self) -> usize {
        self.nx * self.ny
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn reference(&self) -> &[f64] {
        &self.m0
    }

    /// Lower spectral bound `μ = (λν)²` of `DᵀD` under the Neumann closure.
    pub fn mu(&self) -> f64 {
        (self.lambda * self.nu).powi(2)
    }

    /// `D v`.
    pub fn apply_d(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim());
        (0..self.dim())
            .map(|k| self.d_row(k).iter().map(|&(j, d)| d * v[j]).sum())
            .collect()
    }

    pub fn value(&self, m: &[f64]) -> f64 {
        let dm: Vec<f64> = m.iter().zip(&self.m0).map(|(a, b)| a - b).collect();
        let d = self.apply_d(&dm);
        0.5 * crate::linalg::dot(&d, &d)
    }

    /// `DᵀD (m − m₀)`.
    pub fn grad(&self, m: &[f64]) -> Vec<f64> {
        let dm: Vec<f64> = m.iter().zip(&self.m0).map(|(a, b)| a - b).collect();
        self.hess_vec(&dm)
    }

    /// `DᵀD v`.
    pub fn hess_vec(&self, v: &[f64]) -> Vec<f64> {
        self.normal.matvec(v)
    }

    /// Solves `DᵀD x = b` with the precomputed factorization.
    pub fn solve_normal(&self, b: &[f64]) -> Vec<f64> {
        self.factor.solve(b)
    }

    /// Banded `DᵀD`.
    pub fn normal_matrix(&self) -> &SymBanded {
        &self.normal
    }

    /// Factorization of `DᵀD + diag(shift)`.
    pub fn factor_shifted(&self, shift: &[f64]) -> Result<BandedCholesky> {
        let mut m = self.normal.clone();
        m.add_diagonal(shift);
        m.cholesky()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm, rel_diff};
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn op(nx: usize, ny: usize, lambda: f64, nu: f64) -> SmoothingOperator {
        SmoothingOperator::build(nx, ny, 1.0, lambda, nu, vec![0.0; nx * ny], Boundary::Neumann).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dense_normal(r: &SmoothingOperator) -> DMatrix<f64> {
        r.normal_matrix().to_dense()
    }

    #[test]
    fn rejects_non_positive_parameters() {
        assert!(SmoothingOperator::build(4, 4, 1.0, 0.0, 1.0, vec![0.0; 16], Boundary::Neumann).is_err());
        assert!(SmoothingOperator::build(4, 4, 1.0, 1.0, -1.0, vec![0.0; 16], Boundary::Neumann).is_err());
        assert!(SmoothingOperator::build(4, 4, 1.0, 1.0, 1.0, vec![0.0; 15], Boundary::Neumann).is_err());
    }

    #[test]
    fn constant_vector_is_scaled_by_lambda_nu() {
        let r = op(7, 5, 0.8, 0.3);
        let c = vec![2.5; 35];
        let d = r.apply_d(&c);
        for v in d {
            assert!((v - 0.8 * 0.3 * 2.5).abs() < 1e-14);
        }
        let x = r.solve_normal(&c);
        for v in x {
            assert!((v - 2.5 / (0.24f64).powi(2)).abs() < 1e-9 * 2.5 / 0.0576);
        }
    }

    #[test]
    fn normal_matrix_is_d_squared() {
        let r = SmoothingOperator::build(6, 5, 2.0, 0.7, 0.4, vec![0.0; 30], Boundary::Dirichlet).unwrap();
        let v = random(30, 1);
        assert!(rel_diff(&r.hess_vec(&v), &r.apply_d(&r.apply_d(&v))) < 1e-14);
    }

    #[test]
    fn smallest_eigenvalue_is_lambda_nu_squared() {
        let (lambda, nu) = (1.3, 0.25);
        let r = op(8, 8, lambda, nu);
        let eig = SymmetricEigen::new(dense_normal(&r)).eigenvalues;
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let mu = (lambda * nu).powi(2);
        assert!(min >= mu - 1e-9, "{min} < {mu}");
        assert!((min - mu).abs() < 1e-9);
    }

    #[test]
    fn large_nu_approaches_scaled_identity() {
        // fix λν = 1; the Laplacian part of D is λ ‖Δₕ v‖ ≤ λ · 8 ‖v‖ for h = 1
        for nu in [1e2, 1e4, 1e6] {
            let lambda = 1.0 / nu;
            let r = op(8, 8, lambda, nu);
            let v = random(64, 2);
            let dv = r.apply_d(&v);
            let rel = rel_diff(&dv, &v);
            let laplacian_bound = lambda * 8.0;
            assert!(rel <= laplacian_bound + 1e-14, "nu {nu}: {rel} > {laplacian_bound}");
        }
    }

    #[test]
    fn value_grad_quadratic_identities() {
        let m0 = random(48, 3);
        let r = SmoothingOperator::build(6, 8, 1.0, 0.9, 0.5, m0.clone(), Boundary::Neumann).unwrap();
        assert_eq!(r.value(&m0), 0.0);
        assert!(r.grad(&m0).iter().all(|&g| g == 0.0));

        let m = random(48, 4);
        let dm: Vec<f64> = m.iter().zip(&m0).map(|(a, b)| a - b).collect();
        let quad = 0.5 * dot(&r.hess_vec(&dm), &dm);
        assert!((r.value(&m) - quad).abs() <= 1e-12 * quad);

        let g = r.grad(&m);
        let eps = 1e-6;
        for k in [0, 7, 23, 47] {
            let mut p = m.clone();
            let mut q = m.clone();
            p[k] += eps;
            q[k] -= eps;
            let fd = (r.value(&p) - r.value(&q)) / (2.0 * eps);
            assert!((fd - g[k]).abs() <= 1e-8 * norm(&g), "k {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn solve_normal_round_trip_and_residual() {
        let r = op(12, 9, 0.6, 0.2);
        let x = random(108, 5);
        let b = r.hess_vec(&x);
        let y = r.solve_normal(&b);
        assert!(rel_diff(&y, &x) < 1e-9);
        let b2 = random(108, 6);
        let res = rel_diff(&r.hess_vec(&r.solve_normal(&b2)), &b2);
        assert!(res <= 1e-10, "{res}");
    }

    #[test]
    fn smoothing_concentrates_energy_at_low_wavenumbers() {
        let n = 16;
        let r = op(n, n, 1.0, 0.05);
        let b = random(n * n, 7);
        let x = r.solve_normal(&b);
        let low_fraction = |v: &[f64]| {
            let mut planner = FftPlanner::new();
            let fft = planner.plan_fft_forward(n);
            let mut data: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
            for row in data.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = data[i * n + j];
                }
                fft.process(&mut col);
                for i in 0..n {
                    data[i * n + j] = col[i];
                }
            }
            let wrap = |k: usize| k.min(n - k);
            let (mut low, mut total) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let e = data[i * n + j].norm_sqr();
                    total += e;
                    if wrap(i) <= n / 4 && wrap(j) <= n / 4 {
                        low += e;
                    }
                }
            }
            low / total
        };
        let (fb, fx) = (low_fraction(&b), low_fraction(&x));
        assert!(fx > fb, "{fx} <= {fb}");
        assert!(fx > 0.9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn normal_matrix_bounded_below(seed in 0u64..10_000, lambda in 0.1f64..3.0, nu in 0.05f64..2.0) {
            let r = op(6, 7, lambda, nu);
            let v = random(42, seed);
            let q = dot(&r.hess_vec(&v), &v);
            prop_assert!(q >= r.mu() * dot(&v, &v) * (1.0 - 1e-9));
        }

        #[test]
        fn solve_normal_is_linear(seed in 0u64..10_000, alpha in -5.0f64..5.0) {
            let r = op(5, 6, 0.7, 0.3);
            let (b1, b2) = (random(30, seed), random(30, seed + 1));
            let combo: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| alpha * x + y).collect();
            let lhs = r.solve_normal(&combo);
            let (x1, x2) = (r.solve_normal(&b1), r.solve_normal(&b2));
            let rhs: Vec<f64> = x1.iter().zip(&x2).map(|(x, y)| alpha * x + y).collect();
            prop_assert!(rel_diff(&lhs, &rhs) <= 1e-10);
        }
    }
}
