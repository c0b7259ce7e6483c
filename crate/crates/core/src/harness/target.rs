//! Synthetic target perturbations.

use std::path::Path;

use crate::error::{Error, Result};
use crate::wave::{ModelGrid, SimGrid};

use super::config::{TargetConfig, TargetKind};
use super::io::read_model;

/// Width of the Gaussian edge taper, in cells.
pub const TAPER_CELLS: f64 = 2.0;
/// The taper is cut to zero this many cells outside a shape.
pub const TAPER_CUTOFF: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub model: ModelGrid,
    pub cap: f64,
}

/// 1 inside, Gaussian decay outside, 0 past the cutoff. `d` is a signed
/// distance in cells.
fn taper(d: f64) -> f64 {
    if d <= 0.0 {
        1.0
    } else if d > TAPER_CUTOFF {
        0.0
    } else {
        (-(d * d) / (2.0 * TAPER_CELLS * TAPER_CELLS)).exp()
    }
}

/// Shapes in cell coordinates, signed distance negative inside.
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    /// Band of half-width `t` around the circle arc of radius `r` between
    /// angles `a0 < a1` (radians, counterclockwise from +x).
    Arc { cx: f64, cy: f64, r: f64, t: f64, a0: f64, a1: f64 },
}

impl Shape {
    fn distance(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).hypot(y - cy) - r,
            Shape::Arc { cx, cy, r, t, a0, a1 } => {
                let (dx, dy) = (x - cx, y - cy);
                let ang = dy.atan2(dx);
                let on_arc = if ang >= a0 && ang <= a1 {
                    (dx.hypot(dy) - r).abs()
                } else {
                    let end = |a: f64| (dx - r * a.cos()).hypot(dy - r * a.sin());
                    end(a0).min(end(a1))
                };
                on_arc - t
            }
        }
    }
}

/// Evaluates `shapes` at every cell center. With `mirror`, the left half is
/// reflected onto the right so the result is exactly symmetric.
fn compose(grid: &SimGrid, cap: f64, shapes: &[Shape], mirror: bool) -> Result<TargetModel> {
    let cx = 0.5 * (grid.nx as f64 - 1.0);
    let fold = |ix: usize| if mirror { cx - (ix as f64 - cx).abs() } else { ix as f64 };
    let mut values = vec![0.0; grid.n_params()];
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let (x, y) = (fold(ix), iy as f64);
            let w = shapes.iter().map(|s| taper(s.distance(x, y))).fold(0.0, f64::max);
            values[grid.index(ix, iy)] = -cap * w;
        }
    }
    Ok(TargetModel { model: ModelGrid::new(grid.nx, grid.ny, values)?, cap })
}

/// Two disk eyes above an arc mouth, mirror-symmetric about the vertical
/// center line. `y` grows upward. Only the left eye is modeled; mirroring
/// supplies the right one.
fn face(grid: &SimGrid, cap: f64) -> Result<TargetModel> {
    let (nx, ny) = (grid.nx as f64, grid.ny as f64);
    let s = nx.min(ny);
    let cx = 0.5 * (nx - 1.0);
    let cy = 0.5 * (ny - 1.0);
    let eye_dx = 0.16 * s;
    let eye_y = cy + 0.12 * s;
    let eye_r = 0.06 * s;
    let shapes = [
        Shape::Disk { cx: cx - eye_dx, cy: eye_y, r: eye_r },
        Shape::Arc {
            cx,
            cy: cy + 0.04 * s,
            r: 0.24 * s,
            t: 0.035 * s,
            a0: -std::f64::consts::PI * 0.85,
            a1: -std::f64::consts::PI * 0.15,
        },
    ];
    compose(grid, cap, &shapes, true)
}

fn disks(grid: &SimGrid, cap: f64) -> Result<TargetModel> {
    let (nx, ny) = (grid.nx as f64, grid.ny as f64);
    let s = nx.min(ny);
    let shapes = [
        Shape::Disk { cx: 0.3 * nx, cy: 0.35 * ny, r: 0.09 * s },
        Shape::Disk { cx: 0.7 * nx, cy: 0.35 * ny, r: 0.09 * s },
        Shape::Disk { cx: 0.5 * nx, cy: 0.7 * ny, r: 0.12 * s },
    ];
    compose(grid, cap, &shapes, false)
}

fn from_file(path: &Path, grid: &SimGrid, cap: f64) -> Result<TargetModel> {
    let model = read_model(path)?;
    if model.nx != grid.nx || model.ny != grid.ny {
        return Err(Error::shape(format!("target file is {}x{}, grid is {}x{}", model.nx, model.ny, grid.nx, grid.ny)));
    }
    let peak = crate::linalg::norm_inf(&model.values);
    if peak > cap {
        return Err(Error::invalid(format!("target peak {peak} exceeds the cap {cap}")));
    }
    Ok(TargetModel { model, cap })
}

pub fn gen_target(spec: &TargetConfig, grid: &SimGrid) -> Result<TargetModel> {
    if !(spec.cap > 0.0 && spec.cap < 1.0) {
        return Err(Error::invalid("target cap must lie in (0, 1)"));
    }
    if grid.nx < 8 || grid.ny < 8 {
        return Err(Error::invalid("target shapes need at least 8 x 8 cells"));
    }
    match spec.kind {
        TargetKind::Face => face(grid, spec.cap),
        TargetKind::Disks => disks(grid, spec.cap),
        TargetKind::File => {
            let path = spec.file.as_deref().ok_or_else(|| Error::Config("target file missing".into()))?;
            from_file(path, grid, spec.cap)
        }
    }
}
