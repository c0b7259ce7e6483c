//! Model files and PGM renders.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::wave::ModelGrid;

const MAGIC_MODEL: &[u8; 4] = b"MODL";

/// `"MODL"`, `nx`, `ny` as little-endian `u32`, then `nx · ny` little-endian
/// `f64` in the grid's row-major order (`ix` slow, `iy` fast).
pub fn write_model(path: &Path, m: &ModelGrid) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * m.values.len());
    buf.extend_from_slice(MAGIC_MODEL);
    buf.extend_from_slice(&(m.nx as u32).to_le_bytes());
    buf.extend_from_slice(&(m.ny as u32).to_le_bytes());
    for v in &m.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelGrid> {
    let bad = |reason: &str| Error::Format { path: path.display().to_string(), reason: reason.into() };
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC_MODEL {
        return Err(bad("missing MODL header"));
    }
    let nx = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if nx == 0 || ny == 0 || bytes.len() != 12 + 8 * nx * ny {
        return Err(bad("payload size does not match header"));
    }
    let values = bytes[12..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    ModelGrid::new(nx, ny, values).map_err(|e| bad(&e.to_string()))
}

/// Gray level for `v` with `[−range, range]` mapped linearly onto `[0, 255]`,
/// rounding halves up and clamping outside the range.
pub fn gray_level(v: f64, range: f64) -> u8 {
    let t = (v + range) / (2.0 * range) * 255.0;
    (t + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Binary PGM with `nx` columns and `ny` rows; the top row is the largest `iy`.
pub fn pgm_bytes(m: &ModelGrid, range: f64) -> Result<Vec<u8>> {
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::invalid(format!("render range must be positive, got {range}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", m.nx, m.ny).into_bytes();
    for iy in (0..m.ny).rev() {
        for ix in 0..m.nx {
            out.push(gray_level(m.get(ix, iy), range));
        }
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, m: &ModelGrid, range: f64) -> Result<()> {
    fs::write(path, pgm_bytes(m, range)?)?;
    Ok(())
}

/// Reads a model file and writes its render.
pub fn render(model_path: &Path, out: &Path, range: f64) -> Result<()> {
    write_pgm(out, &read_model(model_path)?, range)
}
