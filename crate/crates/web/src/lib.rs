//! Browser bindings: noisy traces, wavefield snapshots and a small inversion.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use wasm_bindgen::prelude::*;

use gogn_fwi::harness::{self, ExperimentConfig};
use gogn_fwi::optim::OptimizerKind;
use gogn_fwi::problem::make_noisy_data;
use gogn_fwi::wave::{Seismogram, SimGrid, SourceSpec, WaveSolver};
use gogn_fwi::SolveLedger;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

#[wasm_bindgen]
pub struct NoisyTrace {
    clean: Vec<f64>,
    noisy: Vec<f64>,
    clean_spectrum: Vec<f64>,
    noise_spectrum: Vec<f64>,
}

#[wasm_bindgen]
impl NoisyTrace {
    #[wasm_bindgen(getter)]
    pub fn clean(&self) -> Vec<f64> {
        self.clean.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn noisy(&self) -> Vec<f64> {
        self.noisy.clone()
    }

    /// Magnitudes of the non-negative frequency bins.
    #[wasm_bindgen(getter)]
    pub fn clean_spectrum(&self) -> Vec<f64> {
        self.clean_spectrum.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn noise_spectrum(&self) -> Vec<f64> {
        self.noise_spectrum.clone()
    }
}

/// A Ricker trace of `n_t` one-second samples with band-limited noise added.
#[wasm_bindgen]
pub fn noisy_trace(frequency: f64, sigma: f64, seed: u32, n_t: usize) -> Result<NoisyTrace, JsError> {
    if frequency.is_nan() || frequency <= 0.0 || n_t < 2 {
        return Err(js_err("need a positive frequency and at least two samples"));
    }
    let src = SourceSpec::ricker(0.0, 0.0, frequency);
    let mut s = Seismogram::zeros(1, n_t);
    for (t, x) in s.trace_mut(0).iter_mut().enumerate() {
        *x = src.signal(t as f64);
    }
    let data = make_noisy_data(vec![s], sigma, seed as u64).map_err(js_err)?;
    let clean = data.clean[0].trace(0).to_vec();
    let noisy = data.observed[0].trace(0).to_vec();
    let noise: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
    Ok(NoisyTrace {
        clean_spectrum: magnitude_spectrum(&clean),
        noise_spectrum: magnitude_spectrum(&noise),
        clean,
        noisy,
    })
}

#[wasm_bindgen]
pub struct Snapshots {
    nx: usize,
    ny: usize,
    frames: Vec<Vec<f64>>,
    model: Vec<f64>,
}

#[wasm_bindgen]
impl Snapshots {
    #[wasm_bindgen(getter)]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[wasm_bindgen(getter)]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[wasm_bindgen(getter)]
    pub fn count(&self) -> usize {
        self.frames.len()
    }

    /// Pressure at recording step `i`, row-major with `y` fastest.
    pub fn frame(&self, i: usize) -> Vec<f64> {
        self.frames.get(i).cloned().unwrap_or_default()
    }

    #[wasm_bindgen(getter)]
    pub fn model(&self) -> Vec<f64> {
        self.model.clone()
    }
}

/// Propagates one source through the face model; `sx`, `sy` are in `[0, 1]`.
#[wasm_bindgen]
pub fn wavefield(n: usize, cap: f64, sx: f64, sy: f64, frequency: f64) -> Result<Snapshots, JsError> {
    let grid = SimGrid { nx: n, ny: n, nt: 120, boundary_width: 30, ..SimGrid::default() };
    let mut cfg = ExperimentConfig { grid: grid.clone(), ..ExperimentConfig::default() };
    cfg.target.cap = cap;
    let target = harness::gen_target(&cfg.target, &grid).map_err(js_err)?;
    let (wx, wy) = grid.extent();
    let src = SourceSpec::ricker(sx.clamp(0.0, 1.0) * wx, sy.clamp(0.0, 1.0) * wy, frequency);
    let ledger = SolveLedger::new();
    let frames = WaveSolver::new(&grid, &ledger).pressure_snapshots(&target.model, &src).map_err(js_err)?;
    Ok(Snapshots { nx: n, ny: n, frames, model: target.model.values })
}

#[wasm_bindgen]
pub struct Inversion {
    nx: usize,
    ny: usize,
    target: Vec<f64>,
    model: Vec<f64>,
    solves: Vec<f64>,
    objective: Vec<f64>,
    model_error: Vec<f64>,
    status: String,
}

#[wasm_bindgen]
impl Inversion {
    #[wasm_bindgen(getter)]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[wasm_bindgen(getter)]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[wasm_bindgen(getter)]
    pub fn target(&self) -> Vec<f64> {
        self.target.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn model(&self) -> Vec<f64> {
        self.model.clone()
    }

    /// Cumulative solve count at each traced iteration.
    #[wasm_bindgen(getter)]
    pub fn solves(&self) -> Vec<f64> {
        self.solves.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn objective(&self) -> Vec<f64> {
        self.objective.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn model_error(&self) -> Vec<f64> {
        self.model_error.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn status(&self) -> String {
        self.status.clone()
    }
}

/// Runs one optimizer on a small clustered-geometry instance.
#[wasm_bindgen]
pub fn invert(optimizer: &str, n: usize, n_sources: usize, budget: u32, seed: u32) -> Result<Inversion, JsError> {
    let kind: OptimizerKind = optimizer.parse().map_err(js_err)?;
    let grid = SimGrid { nx: n, ny: n, boundary_width: 30, ..SimGrid::default() };
    let mut cfg = ExperimentConfig { grid, ..ExperimentConfig::default() };
    cfg.geometry.n_sources = n_sources;
    cfg.data.seed = seed as u64;
    cfg.optimizer.budget = budget as u64;
    let prep = harness::prepare(&cfg).map_err(js_err)?;
    let r = harness::run_optimizer(&prep, kind).map_err(js_err)?;
    let col = |f: fn(&gogn_fwi::optim::TraceRecord) -> f64| r.trace.iter().map(f).collect();
    Ok(Inversion {
        nx: n,
        ny: n,
        target: prep.target.model.values.clone(),
        solves: col(|t| t.solves as f64),
        objective: col(|t| t.objective),
        model_error: col(|t| t.model_error),
        status: r.status.to_string(),
        model: r.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_leaves_the_trace_alone() {
        let t = noisy_trace(0.1, 0.0, 1, 64).unwrap();
        assert_eq!(t.clean, t.noisy);
        assert_eq!(t.clean_spectrum.len(), 33);
    }

    #[test]
    fn snapshots_cover_the_record() {
        let s = wavefield(16, 0.05, 0.5, 0.5, 0.1).unwrap();
        assert_eq!(s.count(), 120);
        assert_eq!(s.frame(60).len(), 256);
        assert!(s.frame(999).is_empty());
    }

    #[test]
    fn inversion_decreases_the_objective() {
        let r = invert("gogn", 16, 2, 20, 3).unwrap();
        assert!(r.objective.last().unwrap() < &r.objective[0]);
        assert_eq!(r.model.len(), 256);
    }
}
