//! Parameter-to-observable maps, weighted least-squares misfits and their
//! derivatives.
//!
//! The optimizers only see the [`DataMisfit`] trait: a sum of `N` terms
//! `φᵢ(m)` with gradients and Gauss-Newton Hessian products. [`FwiProblem`]
//! implements it with the wave solver; [`LinearMisfit`] is a dense linear
//! stand-in used to exercise the optimizers without PDEs.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::SolveLedger;
use crate::linalg::{dot, map_indices};
use crate::wave::{ModelGrid, Seismogram, SimGrid, SourceSpec, WaveSolver, Wavefield};

pub type Point = (f64, f64);

/// Default width of the receiver-density kernel, in km.
pub const DEFAULT_SIGMA_K_KM: f64 = 100.0;

/// Sources and receivers; every source is recorded by every receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub sources: Vec<SourceSpec>,
    pub receivers: Vec<Point>,
}

impl Geometry {
    pub fn validate(&self, grid: &SimGrid) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::invalid("geometry needs at least one source and one receiver"));
        }
        for s in &self.sources {
            grid.snap(s.x, s.y)?;
            if !(s.frequency > 0.0) {
                return Err(Error::invalid("source frequency must be positive"));
            }
        }
        for &(x, y) in &self.receivers {
            grid.snap(x, y)?;
        }
        Ok(())
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }
}

/// Observed data with per-trace weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub observed: Vec<Seismogram>,
    /// Noise-free traces the observations were generated from.
    pub clean: Vec<Seismogram>,
    /// `weights[i][j]` for source `i` and receiver `j`.
    pub weights: Vec<Vec<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

impl DataSet {
    pub fn with_weights(mut self, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != self.observed.len()
            || weights.iter().zip(&self.observed).any(|(w, s)| w.len() != s.n_r)
        {
            return Err(Error::shape("weights do not match the observed traces"));
        }
        if weights.iter().flatten().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn n_sources(&self) -> usize {
        self.observed.len()
    }
}

/// Misfit values without derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MisfitValues {
    pub phi: Vec<f64>,
    pub total: f64,
}

impl MisfitValues {
    pub fn from_terms(phi: Vec<f64>) -> Self {
        let total = phi.iter().sum();
        MisfitValues { phi, total }
    }
}

/// Per-term misfits and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MisfitReport {
    pub phi: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    pub total: f64,
}

impl MisfitReport {
    pub fn new(phi: Vec<f64>, gradients: Vec<Vec<f64>>) -> Self {
        let total = phi.iter().sum();
        MisfitReport { phi, gradients, total }
    }

    /// `Σᵢ ∇φᵢ`, summed in term order.
    pub fn total_gradient(&self) -> Vec<f64> {
        let p = self.gradients.first().map_or(0, Vec::len);
        let mut g = vec![0.0; p];
        for gi in &self.gradients {
            crate::linalg::axpy(1.0, gi, &mut g);
        }
        g
    }
}

/// Gauss-Newton Hessian products `Σᵢ Jᵢᵀ Wᵢ² Jᵢ v` at a fixed model.
pub trait GaussNewtonProduct {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

/// A data misfit `Φ = Σᵢ φᵢ` whose evaluations are counted on a ledger.
pub trait DataMisfit: Sync {
    type Linearized<'a>: GaussNewtonProduct
    where
        Self: 'a;

    fn n_params(&self) -> usize;
    fn n_terms(&self) -> usize;
    fn ledger(&self) -> &SolveLedger;

    /// `φᵢ(m)` for every term; one forward solve per term.
    fn misfit_only(&self, m: &[f64]) -> Result<MisfitValues>;

    /// `φᵢ` and `∇φᵢ`; one forward and one adjoint solve per term.
    fn misfit_and_gradients(&self, m: &[f64]) -> Result<MisfitReport>;

    /// Like [`misfit_and_gradients`](Self::misfit_and_gradients) but also keeps
    /// what is needed for Gauss-Newton products at `m`. Same cost.
    fn linearize(&self, m: &[f64]) -> Result<(MisfitReport, Self::Linearized<'_>)>;

    /// Whether `m` is inside the domain where the forward map is defined.
    fn admissible(&self, _m: &[f64]) -> bool {
        true
    }
}

/// Lower clamp of the diagonal estimate, relative to its largest entry.
pub const DIAG_CLAMP: f64 = 1e-6;

/// `H₀ = GN-Hessian(m₀) · 1`, clamped below at `1e-6 · max` so it can serve as
/// a positive diagonal. An identically non-positive estimate falls back to
/// the identity.
pub fn diag_gn_estimate<P: DataMisfit>(problem: &P, m0: &[f64]) -> Result<Vec<f64>> {
    let (_, lin) = problem.linearize(m0)?;
    let raw = lin.apply(&vec![1.0; problem.n_params()])?;
    Ok(clamp_diagonal(raw))
}

pub fn clamp_diagonal(raw: Vec<f64>) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        warn!("diagonal Hessian estimate is not positive anywhere; using the identity");
        return vec![1.0; raw.len()];
    }
    let floor = DIAG_CLAMP * max;
    raw.into_iter().map(|v| if v < floor { floor } else { v }).collect()
}

/// Simulates `G_i(m)` for every source; one forward solve each.
pub fn simulate(
    model: &ModelGrid,
    geom: &Geometry,
    grid: &SimGrid,
    ledger: &SolveLedger,
) -> Result<Vec<Seismogram>> {
    let solver = WaveSolver::new(grid, ledger);
    map_indices(geom.n_sources(), |i| {
        solver.forward_solve(model, &geom.sources[i], &geom.receivers, false).map(|(d, _)| d)
    })
    .into_iter()
    .collect()
}

/// Gaussian density kernel `k(r) = exp(−r²/2σ²) / (√(2π) σ)`.
pub fn density_kernel(r: f64, sigma: f64) -> f64 {
    (-(r * r) / (2.0 * sigma * sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Receiver-density factor `n_r⁻¹ Σ_ℓ k(‖x_j − x_ℓ‖)` for every receiver;
/// positions in meters, `sigma_k_km` in km.
pub fn density_sums(receivers: &[Point], sigma_k_km: f64) -> Vec<f64> {
    let n = receivers.len() as f64;
    receivers
        .iter()
        .map(|&(xj, yj)| {
            receivers
                .iter()
                .map(|&(xl, yl)| density_kernel(((xj - xl).hypot(yj - yl)) / 1000.0, sigma_k_km))
                .sum::<f64>()
                / n
        })
        .collect()
}

/// `w_ij = 1 / (‖s_ij‖ √(density_j))`. Traces with zero norm get weight 0.
pub fn receiver_weights(geom: &Geometry, clean: &[Seismogram], sigma_k_km: f64) -> Result<Vec<Vec<f64>>> {
    if !(sigma_k_km > 0.0) {
        return Err(Error::invalid("density kernel width must be positive"));
    }
    if clean.len() != geom.n_sources() || clean.iter().any(|s| s.n_r != geom.n_receivers()) {
        return Err(Error::shape("clean traces do not match the geometry"));
    }
    let density = density_sums(&geom.receivers, sigma_k_km);
    let mut dropped = 0;
    let weights = clean
        .iter()
        .map(|s| {
            (0..s.n_r)
                .map(|j| {
                    let norm = dot(s.trace(j), s.trace(j)).sqrt();
                    if norm > 0.0 {
                        1.0 / (norm * density[j].sqrt())
                    } else {
                        dropped += 1;
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    if dropped > 0 {
        warn!("{dropped} source-receiver traces have zero norm; their weights are set to 0");
    }
    Ok(weights)
}

/// Adds band-limited noise `ε = σ Re(F⁻¹(z ⊙ F(s)))` to every trace, with `z`
/// i.i.d. standard normal per frequency bin. The FFT runs over the time axis
/// of each trace; draws are taken in (source, receiver, bin) order.
pub fn make_noisy_data(clean: Vec<Seismogram>, sigma: f64, seed: u64) -> Result<DataSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise level must be non-negative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::<f64>::new();
    let observed = clean
        .iter()
        .map(|s| {
            let mut out = s.clone();
            let fwd = planner.plan_fft_forward(s.n_t);
            let inv = planner.plan_fft_inverse(s.n_t);
            for j in 0..s.n_r {
                let noise = band_limited_noise(s.trace(j), &mut rng, fwd.as_ref(), inv.as_ref());
                if sigma > 0.0 {
                    for (o, e) in out.trace_mut(j).iter_mut().zip(noise) {
                        *o += sigma * e;
                    }
                }
            }
            out
        })
        .collect();
    let weights = clean.iter().map(|s| vec![1.0; s.n_r]).collect();
    Ok(DataSet { observed, clean, weights, sigma, seed })
}

/// `Re(F⁻¹(z ⊙ F(trace)))` for one fresh draw of `z`.
fn band_limited_noise(
    trace: &[f64],
    rng: &mut ChaCha8Rng,
    fwd: &dyn rustfft::Fft<f64>,
    inv: &dyn rustfft::Fft<f64>,
) -> Vec<f64> {
    let n = trace.len();
    let mut buf: Vec<Complex<f64>> = trace.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fwd.process(&mut buf);
    for b in buf.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *b *= z;
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Weighted half squared residual of one source and the adjoint source
/// `W² (s − d)` when requested.
fn weighted_residual(sim: &Seismogram, obs: &Seismogram, w: &[f64], want_adjoint: bool) -> (f64, Option<Seismogram>) {
    let mut phi = 0.0;
    let mut adj = want_adjoint.then(|| Seismogram::zeros(sim.n_r, sim.n_t));
    for (j, wj) in w.iter().enumerate().take(sim.n_r) {
        let w2 = wj * wj;
        let mut sq = 0.0;
        for (t, (s, d)) in sim.trace(j).iter().zip(obs.trace(j)).enumerate() {
            let r = s - d;
            sq += r * r;
            if let Some(a) = adj.as_mut() {
                a.data[j * sim.n_t + t] = w2 * r;
            }
        }
        phi += 0.5 * w2 * sq;
    }
    (phi, adj)
}

/// Full-waveform-inversion misfit over a fixed geometry and data set.
#[derive(Debug)]
pub struct FwiProblem {
    pub grid: SimGrid,
    pub geometry: Geometry,
    pub data: DataSet,
    ledger: SolveLedger,
}

impl Clone for FwiProblem {
    /// Clones the setup with a fresh ledger.
    fn clone(&self) -> Self {
        FwiProblem {
            grid: self.grid.clone(),
            geometry: self.geometry.clone(),
            data: self.data.clone(),
            ledger: SolveLedger::new(),
        }
    }
}

impl FwiProblem {
    pub fn new(grid: SimGrid, geometry: Geometry, data: DataSet) -> Result<Self> {
        grid.validate()?;
        geometry.validate(&grid)?;
        if data.n_sources() != geometry.n_sources() {
            return Err(Error::shape("data set and geometry disagree on the number of sources"));
        }
        for s in &data.observed {
            if s.n_r != geometry.n_receivers() || s.n_t != grid.nt {
                return Err(Error::shape(format!(
                    "observed seismogram is {}x{}, expected {}x{}",
                    s.n_r,
                    s.n_t,
                    geometry.n_receivers(),
                    grid.nt
                )));
            }
        }
        Ok(FwiProblem { grid, geometry, data, ledger: SolveLedger::new() })
    }

    fn model(&self, m: &[f64]) -> Result<ModelGrid> {
        ModelGrid::new(self.grid.nx, self.grid.ny, m.to_vec())
    }

    fn solver(&self) -> WaveSolver<'_> {
        WaveSolver::new(&self.grid, &self.ledger)
    }

    /// Forward fields at `m` for Gauss-Newton products; one forward solve per
    /// source.
    pub fn forward_fields(&self, m: &[f64]) -> Result<FwiLinearization<'_>> {
        let model = self.model(m)?;
        let solver = self.solver();
        let fields = map_indices(self.geometry.n_sources(), |i| {
            solver
                .forward_solve(&model, &self.geometry.sources[i], &self.geometry.receivers, true)
                .map(|(_, f)| f.expect("field requested"))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(FwiLinearization { problem: self, model, fields })
    }

    /// One-off GN Hessian product; `N` forward solves plus the `2N` of the
    /// product itself.
    pub fn gn_hessian_vec(&self, m: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.forward_fields(m)?.apply(v)
    }

    fn evaluate(&self, m: &[f64], gradients: bool, keep: bool) -> Result<(MisfitReport, Vec<Option<Wavefield>>)> {
        let model = self.model(m)?;
        let solver = self.solver();
        let geom = &self.geometry;
        let per_source = map_indices(geom.n_sources(), |i| -> Result<_> {
            let (sim, field) = solver.forward_solve(&model, &geom.sources[i], &geom.receivers, gradients)?;
            let (phi, adj) = weighted_residual(&sim, &self.data.observed[i], &self.data.weights[i], gradients);
            let grad = match (adj, field.as_ref()) {
                (Some(adj), Some(f)) => solver.adjoint_solve(&model, &adj, &geom.receivers, f)?,
                _ => Vec::new(),
            };
            Ok((phi, grad, if keep { field } else { None }))
        });
        let mut phi = Vec::with_capacity(per_source.len());
        let mut grads = Vec::with_capacity(per_source.len());
        let mut fields = Vec::with_capacity(per_source.len());
        for r in per_source {
            let (p, g, f) = r?;
            phi.push(p);
            grads.push(g);
            fields.push(f);
        }
        Ok((MisfitReport::new(phi, grads), fields))
    }
}

impl DataMisfit for FwiProblem {
    type Linearized<'a> = FwiLinearization<'a>;

    fn n_params(&self) -> usize {
        self.grid.n_params()
    }

    fn n_terms(&self) -> usize {
        self.geometry.n_sources()
    }

    fn ledger(&self) -> &SolveLedger {
        &self.ledger
    }

    fn misfit_only(&self, m: &[f64]) -> Result<MisfitValues> {
        let (report, _) = self.evaluate(m, false, false)?;
        Ok(MisfitValues { phi: report.phi, total: report.total })
    }

    fn misfit_and_gradients(&self, m: &[f64]) -> Result<MisfitReport> {
        Ok(self.evaluate(m, true, false)?.0)
    }

    fn linearize(&self, m: &[f64]) -> Result<(MisfitReport, FwiLinearization<'_>)> {
        let (report, fields) = self.evaluate(m, true, true)?;
        let fields = fields.into_iter().map(|f| f.expect("field kept")).collect();
        Ok((report, FwiLinearization { problem: self, model: self.model(m)?, fields }))
    }

    fn admissible(&self, m: &[f64]) -> bool {
        m.iter().all(|v| v.is_finite() && *v > -1.0)
    }
}

/// Forward fields of every source at one model.
#[derive(Debug)]
pub struct FwiLinearization<'a> {
    problem: &'a FwiProblem,
    model: ModelGrid,
    fields: Vec<Wavefield>,
}

impl GaussNewtonProduct for FwiLinearization<'_> {
    /// One Born and one adjoint solve per source.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let pr = self.problem;
        let solver = pr.solver();
        let geom = &pr.geometry;
        let parts = map_indices(geom.n_sources(), |i| -> Result<Vec<f64>> {
            let mut jv = solver.born_solve(&self.model, v, &geom.receivers, &self.fields[i])?;
            for (j, w) in pr.data.weights[i].iter().enumerate() {
                let w2 = w * w;
                jv.trace_mut(j).iter_mut().for_each(|x| *x *= w2);
            }
            solver.adjoint_solve(&self.model, &jv, &geom.receivers, &self.fields[i])
        });
        let mut out = vec![0.0; v.len()];
        for part in parts {
            crate::linalg::axpy(1.0, &part?, &mut out);
        }
        Ok(out)
    }
}

/// Sum of dense linear least-squares terms `φᵢ = ½ ‖Aᵢ m − bᵢ‖²`. Each term
/// evaluation is booked as a forward solve, each gradient as an adjoint
/// solve and each `Aᵢ v` in a Hessian product as a Born solve, mirroring the
/// cost structure of [`FwiProblem`].
#[derive(Debug)]
pub struct LinearMisfit {
    p: usize,
    /// Row-major `(rows × p)` blocks.
    blocks: Vec<(usize, Vec<f64>)>,
    rhs: Vec<Vec<f64>>,
    ledger: SolveLedger,
}

impl LinearMisfit {
    /// `blocks[i]` is row-major with `p` columns.
    pub fn new(p: usize, blocks: Vec<Vec<f64>>, rhs: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.len() != rhs.len() || blocks.is_empty() {
            return Err(Error::shape("need one right-hand side per block"));
        }
        let mut out = Vec::with_capacity(blocks.len());
        for (a, b) in blocks.into_iter().zip(&rhs) {
            if a.len() != b.len() * p {
                return Err(Error::shape("block size does not match its right-hand side"));
            }
            out.push((b.len(), a));
        }
        Ok(LinearMisfit { p, blocks: out, rhs, ledger: SolveLedger::new() })
    }

    fn apply_block(&self, i: usize, m: &[f64]) -> Vec<f64> {
        let (rows, a) = &self.blocks[i];
        (0..*rows).map(|r| dot(&a[r * self.p..(r + 1) * self.p], m)).collect()
    }

    fn apply_block_t(&self, i: usize, r: &[f64]) -> Vec<f64> {
        let (rows, a) = &self.blocks[i];
        let mut out = vec![0.0; self.p];
        for k in 0..*rows {
            crate::linalg::axpy(r[k], &a[k * self.p..(k + 1) * self.p], &mut out);
        }
        out
    }

    fn residual(&self, i: usize, m: &[f64]) -> Vec<f64> {
        self.ledger.record_forward();
        let mut r = self.apply_block(i, m);
        for (x, b) in r.iter_mut().zip(&self.rhs[i]) {
            *x -= b;
        }
        r
    }
}

impl DataMisfit for LinearMisfit {
    type Linearized<'a> = &'a LinearMisfit;

    fn n_params(&self) -> usize {
        self.p
    }

    fn n_terms(&self) -> usize {
        self.blocks.len()
    }

    fn ledger(&self) -> &SolveLedger {
        &self.ledger
    }

    fn misfit_only(&self, m: &[f64]) -> Result<MisfitValues> {
        let phi = (0..self.n_terms())
            .map(|i| {
                let r = self.residual(i, m);
                0.5 * dot(&r, &r)
            })
            .collect();
        Ok(MisfitValues::from_terms(phi))
    }

    fn misfit_and_gradients(&self, m: &[f64]) -> Result<MisfitReport> {
        let mut phi = Vec::new();
        let mut grads = Vec::new();
        for i in 0..self.n_terms() {
            let r = self.residual(i, m);
            phi.push(0.5 * dot(&r, &r));
            self.ledger.record_adjoint();
            grads.push(self.apply_block_t(i, &r));
        }
        Ok(MisfitReport::new(phi, grads))
    }

    fn linearize(&self, m: &[f64]) -> Result<(MisfitReport, &LinearMisfit)> {
        Ok((self.misfit_and_gradients(m)?, self))
    }
}

impl GaussNewtonProduct for &LinearMisfit {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.p];
        for i in 0..self.n_terms() {
            self.ledger.record_born();
            let av = self.apply_block(i, v);
            self.ledger.record_adjoint();
            crate::linalg::axpy(1.0, &self.apply_block_t(i, &av), &mut out);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Persistence

const MAGIC_SEIS: &[u8; 4] = b"SEIS";

/// Writes `"SEIS"`, `n_r`, `n_t` (little-endian `u32`) and the samples as
/// little-endian `f64`, receiver-major.
pub fn write_seismogram(path: &Path, s: &Seismogram) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * s.data.len());
    buf.extend_from_slice(MAGIC_SEIS);
    buf.extend_from_slice(&(s.n_r as u32).to_le_bytes());
    buf.extend_from_slice(&(s.n_t as u32).to_le_bytes());
    for v in &s.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_seismogram(path: &Path) -> Result<Seismogram> {
    let bad = |reason: &str| Error::Format { path: path.display().to_string(), reason: reason.into() };
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC_SEIS {
        return Err(bad("missing SEIS header"));
    }
    let n_r = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n_t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + 8 * n_r * n_t {
        return Err(bad("payload size does not match header"));
    }
    let data = bytes[12..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Seismogram { n_r, n_t, data })
}

/// Plain-text description stored next to the binary traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub sigma: f64,
    pub n_sources: usize,
    pub n_receivers: usize,
    pub grid: SimGrid,
    pub geometry: Geometry,
    /// Cells the sources and receivers were snapped to, `[ix, iy]`.
    pub source_cells: Vec<[usize; 2]>,
    pub receiver_cells: Vec<[usize; 2]>,
}

impl DataSet {
    /// Writes `observed_NNN.seis`, `clean_NNN.seis`, `weights.seis` (one row per
    /// receiver, one column per source) and `manifest.toml`.
    pub fn save(&self, dir: &Path, grid: &SimGrid, geom: &Geometry) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, (obs, clean)) in self.observed.iter().zip(&self.clean).enumerate() {
            write_seismogram(&dir.join(format!("observed_{i:03}.seis")), obs)?;
            write_seismogram(&dir.join(format!("clean_{i:03}.seis")), clean)?;
        }
        let n_r = geom.n_receivers();
        let n = self.n_sources();
        let mut w = Seismogram::zeros(n_r, n);
        for (i, wi) in self.weights.iter().enumerate() {
            for (j, wij) in wi.iter().enumerate() {
                w.data[j * n + i] = *wij;
            }
        }
        write_seismogram(&dir.join("weights.seis"), &w)?;
        let snap = |&(x, y): &Point| grid.snap(x, y).map(|(a, b)| [a, b]);
        let manifest = DataManifest {
            seed: self.seed,
            sigma: self.sigma,
            n_sources: n,
            n_receivers: n_r,
            grid: grid.clone(),
            geometry: geom.clone(),
            source_cells: geom.sources.iter().map(|s| snap(&(s.x, s.y))).collect::<Result<_>>()?,
            receiver_cells: geom.receivers.iter().map(snap).collect::<Result<_>>()?,
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        let mut f = fs::File::create(dir.join("manifest.toml"))?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(DataSet, DataManifest)> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path)?;
        let manifest: DataManifest = toml::from_str(&text)
            .map_err(|e| Error::Format { path: path.display().to_string(), reason: e.to_string() })?;
        let n = manifest.n_sources;
        let mut observed = Vec::with_capacity(n);
        let mut clean = Vec::with_capacity(n);
        for i in 0..n {
            observed.push(read_seismogram(&dir.join(format!("observed_{i:03}.seis")))?);
            clean.push(read_seismogram(&dir.join(format!("clean_{i:03}.seis")))?);
        }
        let w = read_seismogram(&dir.join("weights.seis"))?;
        if w.n_t != n || w.n_r != manifest.n_receivers {
            return Err(Error::Format { path: dir.display().to_string(), reason: "weights shape".into() });
        }
        let weights = (0..n).map(|i| (0..w.n_r).map(|j| w.data[j * n + i]).collect()).collect();
        let data = DataSet { observed, clean, weights, sigma: manifest.sigma, seed: manifest.seed };
        Ok((data, manifest))
    }
}
