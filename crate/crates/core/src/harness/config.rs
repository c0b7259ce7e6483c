//! Experiment description, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Budget, GncgOptions, InitialStep, LbfgsOptions, LinesearchPolicy, OptimizerKind};
use crate::problem::DEFAULT_SIGMA_K_KM;
use crate::regularizer::Boundary;
use crate::wave::SimGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    /// I.i.d. uniform over the central 5/8 of the domain.
    Uniform,
    /// The bundled coast/ocean layout.
    Clustered,
    /// A layout file in the same format as the bundled one.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    pub n_sources: usize,
    pub n_receivers: usize,
    pub seed: u64,
    /// Add jittered copies of the sources until there are this many; 0 keeps
    /// `n_sources`.
    pub augment_to: usize,
    /// Jitter standard deviation as a fraction of the domain width.
    pub jitter: f64,
    /// Ricker peak frequency, Hz.
    pub frequency: f64,
    pub amplitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            kind: GeometryKind::Clustered,
            n_sources: 4,
            n_receivers: 50,
            seed: 1,
            augment_to: 0,
            jitter: 0.05,
            frequency: 0.1,
            amplitude: 1.0,
            file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Face,
    Disks,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub kind: TargetKind,
    /// Largest perturbation magnitude.
    pub cap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { kind: TargetKind::Face, cap: 0.05, file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerConfig {
    /// Defaults to the value balancing `‖DᵀD‖` against the largest diagonal
    /// misfit-curvature entry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Defaults to `1 / (5h)²`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sigma: f64,
    pub seed: u64,
    pub sigma_k_km: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { sigma: 0.1, seed: 1, sigma_k_km: DEFAULT_SIGMA_K_KM }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StartModel {
    /// Homogeneous background; also the regularization reference.
    #[default]
    Zero,
    /// Start at, and regularize toward, the target.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub list: Vec<OptimizerKind>,
    pub budget: u64,
    pub start: StartModel,
    pub eps_phi: f64,
    pub lbfgs_memory: usize,
    pub lbfgs_smoothing: bool,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
    pub richardson_iters: usize,
    pub power_iters: usize,
    pub history: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let lb = LbfgsOptions::default();
        let cg = GncgOptions::default();
        OptimizerConfig {
            list: OptimizerKind::ALL.to_vec(),
            budget: Budget::default().max_solves,
            start: StartModel::Zero,
            eps_phi: 0.0,
            lbfgs_memory: lb.memory,
            lbfgs_smoothing: lb.smoothing,
            cg_tol: cg.cg_tol,
            cg_maxiter: cg.cg_maxiter,
            richardson_iters: cg.richardson_iters,
            power_iters: cg.power_iters,
            history: cg.history,
        }
    }
}

impl OptimizerConfig {
    pub fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions { memory: self.lbfgs_memory, smoothing: self.lbfgs_smoothing }
    }

    pub fn gncg(&self) -> GncgOptions {
        GncgOptions {
            cg_tol: self.cg_tol,
            cg_maxiter: self.cg_maxiter,
            richardson_iters: self.richardson_iters,
            power_iters: self.power_iters,
            history: self.history,
        }
    }
}

/// Overrides of the linesearch protocol; the first-trial rule stays tied to
/// the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinesearchConfig {
    pub max_iters: usize,
    pub quad_interp_phase: usize,
    pub armijo_factor: f64,
    pub armijo_c1: f64,
    pub safeguard_lo: f64,
    pub safeguard_hi: f64,
    /// `α₀ = step_cap / ‖p‖∞` for all optimizers but GNCG.
    pub step_cap: f64,
}

impl Default for LinesearchConfig {
    fn default() -> Self {
        let p = LinesearchPolicy::default();
        let cap = match p.initial_step {
            InitialStep::Cap(c) => c,
            InitialStep::Unit => 0.05,
        };
        LinesearchConfig {
            max_iters: p.max_iters,
            quad_interp_phase: p.quad_interp_phase,
            armijo_factor: p.armijo_factor,
            armijo_c1: p.armijo_c1,
            safeguard_lo: p.safeguard.0,
            safeguard_hi: p.safeguard.1,
            step_cap: cap,
        }
    }
}

impl LinesearchConfig {
    pub fn policy_for(&self, kind: OptimizerKind) -> LinesearchPolicy {
        let initial_step = match kind {
            OptimizerKind::Gncg => InitialStep::Unit,
            _ => InitialStep::Cap(self.step_cap),
        };
        LinesearchPolicy {
            max_iters: self.max_iters,
            quad_interp_phase: self.quad_interp_phase,
            armijo_factor: self.armijo_factor,
            armijo_c1: self.armijo_c1,
            safeguard: (self.safeguard_lo, self.safeguard_hi),
            initial_step,
            ..LinesearchPolicy::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: SimGrid,
    pub geometry: GeometryConfig,
    pub target: TargetConfig,
    pub regularizer: RegularizerConfig,
    pub data: DataConfig,
    pub optimizer: OptimizerConfig,
    pub linesearch: LinesearchConfig,
}

/// Tables a manifest adds on top of the configuration.
const MANIFEST_TABLES: [&str; 2] = ["derived", "results"];

impl ExperimentConfig {
    /// Parses a configuration or a run manifest (whose extra tables are
    /// ignored). Relative file paths resolve against the file's directory.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for t in MANIFEST_TABLES {
            table.remove(t);
        }
        let mut cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            for f in [&mut cfg.geometry.file, &mut cfg.target.file].into_iter().flatten() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: &str| Err(Error::Config(m.into()));
        self.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
        let g = &self.geometry;
        if g.n_sources == 0 || g.n_receivers == 0 {
            return cfg_err("geometry needs at least one source and one receiver");
        }
        if g.augment_to != 0 && g.augment_to < g.n_sources {
            return cfg_err("augment_to must be 0 or at least n_sources");
        }
        if !(g.frequency > 0.0) || !(g.jitter >= 0.0) {
            return cfg_err("frequency must be positive and jitter non-negative");
        }
        if g.kind == GeometryKind::File && g.file.is_none() {
            return cfg_err("geometry kind 'file' needs geometry.file");
        }
        if let Some(f) = &g.file {
            if g.kind == GeometryKind::File && !f.exists() {
                return Err(Error::Config(format!("geometry file {} does not exist", f.display())));
            }
        }
        let t = &self.target;
        if !(t.cap > 0.0 && t.cap < 1.0) {
            return cfg_err("target cap must lie in (0, 1)");
        }
        if t.kind == TargetKind::File {
            match &t.file {
                None => return cfg_err("target kind 'file' needs target.file"),
                Some(f) if !f.exists() => return Err(Error::Config(format!("target file {} does not exist", f.display()))),
                _ => {}
            }
        }
        for v in [self.regularizer.lambda, self.regularizer.nu].into_iter().flatten() {
            if !(v > 0.0) {
                return cfg_err("lambda and nu must be positive");
            }
        }
        if !(self.data.sigma >= 0.0) || !(self.data.sigma_k_km > 0.0) {
            return cfg_err("sigma must be non-negative and sigma_k_km positive");
        }
        let o = &self.optimizer;
        if o.list.is_empty() {
            return cfg_err("optimizer list is empty");
        }
        if o.lbfgs_memory == 0 || o.cg_maxiter == 0 || o.history == 0 || !(o.cg_tol > 0.0 && o.cg_tol < 1.0) {
            return cfg_err("invalid optimizer settings");
        }
        for k in &o.list {
            self.linesearch.policy_for(*k).validate()?;
        }
        Ok(())
    }
}
