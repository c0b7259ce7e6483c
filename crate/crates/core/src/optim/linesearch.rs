//! Backtracking linesearch: an initial trial, a few safeguarded quadratic
//! interpolation steps, then halving.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the first trial step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "value")]
pub enum InitialStep {
    /// `α₀ = 1`
    Unit,
    /// `α₀ = cap / ‖p‖∞`, so the first trial changes no entry by more than `cap`.
    Cap(f64),
}

impl InitialStep {
    pub fn alpha(&self, p: &[f64]) -> f64 {
        match *self {
            InitialStep::Unit => 1.0,
            InitialStep::Cap(cap) => {
                let n = crate::linalg::norm_inf(p);
                if n > 0.0 {
                    cap / n
                } else {
                    1.0
                }
            }
        }
    }
}

/// Exact minimization is only meant for quadratic test objectives: the single
/// interpolation through `(0, F₀, g₀)` and the first trial is then exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Protocol,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinesearchPolicy {
    /// Total objective evaluations allowed.
    pub max_iters: usize,
    /// Interpolation trials after the first one.
    pub quad_interp_phase: usize,
    pub armijo_factor: f64,
    /// Sufficient-decrease constant; 0 accepts any decrease.
    pub armijo_c1: f64,
    /// Interpolated steps are clamped to `[lo, hi] · α_trial`.
    pub safeguard: (f64, f64),
    pub initial_step: InitialStep,
    pub mode: SearchMode,
}

impl Default for LinesearchPolicy {
    fn default() -> Self {
        LinesearchPolicy {
            max_iters: 10,
            quad_interp_phase: 5,
            armijo_factor: 0.5,
            armijo_c1: 0.0,
            safeguard: (0.1, 0.9),
            initial_step: InitialStep::Cap(0.05),
            mode: SearchMode::Protocol,
        }
    }
}

impl LinesearchPolicy {
    pub fn unit() -> Self {
        LinesearchPolicy { initial_step: InitialStep::Unit, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.quad_interp_phase > self.max_iters {
            return Err(Error::Config("linesearch needs max_iters >= 1 and quad_interp_phase <= max_iters".into()));
        }
        if !(self.armijo_factor > 0.0 && self.armijo_factor < 1.0) {
            return Err(Error::Config("armijo_factor must lie in (0, 1)".into()));
        }
        if !(self.armijo_c1 >= 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::Config("armijo_c1 must lie in [0, 1)".into()));
        }
        let (lo, hi) = self.safeguard;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config("safeguard must satisfy 0 < lo <= hi < 1".into()));
        }
        if let InitialStep::Cap(c) = self.initial_step {
            if !(c > 0.0) {
                return Err(Error::Config("initial step cap must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Minimizer of the parabola through `(0, f0)` with slope `g0` and
/// `(alpha, f)`.
pub fn quadratic_minimizer(f0: f64, g0: f64, alpha: f64, f: f64) -> f64 {
    -g0 * alpha * alpha / (2.0 * (f - f0 - g0 * alpha))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinesearchOutcome {
    /// Accepted step, or `None` if no trial decreased the objective.
    pub alpha: Option<f64>,
    pub value: f64,
    pub evals: usize,
    /// Every `(α, F(α))` tried, in order.
    pub trials: Vec<(f64, f64)>,
}

/// Searches along a ray with `phi(α) = F(m + α p)`. `g0` must be negative.
pub fn search<F>(mut phi: F, f0: f64, g0: f64, alpha0: f64, policy: &LinesearchPolicy) -> Result<LinesearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(g0 < 0.0) {
        return Err(Error::invalid(format!("linesearch needs a descent direction, got slope {g0:e}")));
    }
    if !(alpha0 > 0.0) || !alpha0.is_finite() {
        return Err(Error::invalid(format!("initial step must be positive, got {alpha0}")));
    }
    let mut trials: Vec<(f64, f64)> = Vec::new();
    let accept = |a: f64, f: f64| f < f0 + policy.armijo_c1 * a * g0;

    let mut alpha = alpha0;
    let mut eval = |a: f64, trials: &mut Vec<(f64, f64)>| -> Result<f64> {
        let f = phi(a)?;
        trials.push((a, f));
        Ok(f)
    };
    let mut f = eval(alpha, &mut trials)?;
    let done = |alpha, f, trials: Vec<(f64, f64)>| LinesearchOutcome { alpha: Some(alpha), value: f, evals: trials.len(), trials };

    if policy.mode == SearchMode::Exact && f.is_finite() && trials.len() < policy.max_iters {
        let a_star = quadratic_minimizer(f0, g0, alpha, f);
        if a_star > 0.0 && a_star.is_finite() {
            let fs = eval(a_star, &mut trials)?;
            if accept(a_star, fs) && (fs <= f || !accept(alpha, f)) {
                return Ok(done(a_star, fs, trials));
            }
        }
    }
    if accept(alpha, f) {
        return Ok(done(alpha, f, trials));
    }

    let (lo, hi) = policy.safeguard;
    let mut interp = 0;
    while trials.len() < policy.max_iters {
        alpha = if interp < policy.quad_interp_phase && f.is_finite() {
            interp += 1;
            quadratic_minimizer(f0, g0, alpha, f).clamp(lo * alpha, hi * alpha)
        } else {
            interp = policy.quad_interp_phase;
            alpha * policy.armijo_factor
        };
        f = eval(alpha, &mut trials)?;
        if accept(alpha, f) {
            return Ok(done(alpha, f, trials));
        }
    }
    Ok(LinesearchOutcome { alpha: None, value: f0, evals: trials.len(), trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_formula() {
        assert_eq!(quadratic_minimizer(0.0, -1.0, 1.0, 1.0), 0.25);
    }

    #[test]
    fn parabola_is_hit_in_one_interpolation() {
        let phi = |a: f64| Ok((a - 1.0) * (a - 1.0));
        let out = search(phi, 1.0, -2.0, 3.0, &LinesearchPolicy::default()).unwrap();
        assert_eq!(out.alpha, Some(1.0));
        assert_eq!(out.evals, 2);
    }

    #[test]
    fn first_decrease_is_accepted() {
        let out = search(|a: f64| Ok((a - 1.0).powi(2)), 1.0, -2.0, 0.3, &LinesearchPolicy::default()).unwrap();
        assert_eq!(out.alpha, Some(0.3));
        assert_eq!(out.evals, 1);
    }

    #[test]
    fn safeguard_clamps_interpolated_steps() {
        // a very steep rise makes the parabola minimizer tiny; clamp to 0.1 α
        let out = search(|a: f64| Ok(if a > 0.5 { 1e6 } else { -a }), 0.0, -1.0, 1.0, &LinesearchPolicy::default()).unwrap();
        assert!((out.trials[1].0 - 0.1).abs() < 1e-15);
        // an insufficient decrease puts the minimizer beyond α; clamp to 0.9 α
        let policy = LinesearchPolicy { armijo_c1: 0.9, ..LinesearchPolicy::default() };
        let out = search(|a: f64| Ok(if a > 0.95 { -0.6 } else { -a }), 0.0, -1.0, 1.0, &policy).unwrap();
        assert!((out.trials[1].0 - 0.9).abs() < 1e-15);
    }

    #[test]
    fn halving_follows_interpolation_and_evals_are_capped() {
        let out = search(|_| Ok(1.0), 0.0, -1.0, 1.0, &LinesearchPolicy::default()).unwrap();
        assert_eq!(out.alpha, None);
        assert_eq!(out.evals, 10);
        for w in out.trials[6..].windows(2) {
            assert!((w[1].0 - 0.5 * w[0].0).abs() < 1e-18);
        }
        for w in out.trials[..6].windows(2) {
            assert!(w[1].0 <= 0.9 * w[0].0 + 1e-18 && w[1].0 >= 0.1 * w[0].0 - 1e-18);
        }
    }

    #[test]
    fn non_finite_trials_back_off() {
        let out = search(|a: f64| Ok(if a > 0.2 { f64::INFINITY } else { -a }), 0.0, -1.0, 1.0, &LinesearchPolicy::default()).unwrap();
        assert_eq!(out.alpha, Some(0.125));
        assert_eq!(out.evals, 4);
    }

    #[test]
    fn armijo_mode_demands_sufficient_decrease() {
        let policy = LinesearchPolicy { armijo_c1: 0.5, ..LinesearchPolicy::default() };
        // F(α) = −α + α², slope −1: α = 0.9 decreases F but not by 0.45
        let phi = |a: f64| Ok(-a + a * a);
        let out = search(phi, 0.0, -1.0, 0.9, &policy).unwrap();
        let a = out.alpha.unwrap();
        assert!(-a + a * a < -0.5 * a);
        assert!(out.evals > 1);
    }

    #[test]
    fn exact_mode_minimizes_quadratics() {
        let policy = LinesearchPolicy { mode: SearchMode::Exact, ..LinesearchPolicy::default() };
        let out = search(|a: f64| Ok(3.0 * (a - 0.4).powi(2) - 0.48), 0.0, -2.4, 0.05, &policy).unwrap();
        assert!((out.alpha.unwrap() - 0.4).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(search(|_| Ok(0.0), 0.0, 0.0, 1.0, &LinesearchPolicy::default()).is_err());
        assert!(search(|_| Ok(0.0), 0.0, -1.0, 0.0, &LinesearchPolicy::default()).is_err());
        let bad = LinesearchPolicy { quad_interp_phase: 11, ..LinesearchPolicy::default() };
        assert!(bad.validate().is_err());
        assert!(LinesearchPolicy::default().validate().is_ok());
    }

    #[test]
    fn cap_rule() {
        assert_eq!(InitialStep::Cap(0.05).alpha(&[0.5, -2.0]), 0.025);
        assert_eq!(InitialStep::Unit.alpha(&[0.5, -2.0]), 1.0);
    }
}
