//! Source-receiver layouts.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::problem::{Geometry, Point};
use crate::wave::{SimGrid, SourceSpec};

use super::config::{GeometryConfig, GeometryKind};

/// Bundled layout: a dense receiver band along an eastern coastline and a
/// sparsely instrumented ocean, in unit coordinates.
pub const CLUSTERED_LAYOUT: &str = include_str!("../../data/clustered.txt");

/// Fraction of each axis bounding the uniform sampling square.
pub const UNIFORM_WINDOW: (f64, f64) = (100.0 / 480.0, 400.0 / 480.0);

/// Redraws allowed per jittered source before giving up.
pub const MAX_REDRAWS: usize = 100;

/// Parses `S x y` / `R x y` lines in unit coordinates. `#` starts a comment.
pub fn parse_layout(text: &str) -> Result<(Vec<Point>, Vec<Point>)> {
    let mut sources = Vec::new();
    let mut receivers = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap();
        let mut coord = || -> Result<f64> {
            it.next()
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| (0.0..1.0).contains(v))
                .ok_or_else(|| Error::Config(format!("layout line {}: expected a coordinate in [0, 1)", n + 1)))
        };
        let p = (coord()?, coord()?);
        match tag {
            "S" | "s" => sources.push(p),
            "R" | "r" => receivers.push(p),
            _ => return Err(Error::Config(format!("layout line {}: unknown record {tag:?}", n + 1))),
        }
    }
    Ok((sources, receivers))
}

fn take(points: Vec<Point>, n: usize, what: &str) -> Result<Vec<Point>> {
    if points.len() < n {
        return Err(Error::Config(format!("layout holds {} {what}, {n} requested", points.len())));
    }
    Ok(points.into_iter().take(n).collect())
}

/// Builds the configured geometry. Layout files contribute their first
/// `n_sources` sources and first `n_receivers` receivers.
pub fn gen_geometry(spec: &GeometryConfig, grid: &SimGrid) -> Result<Geometry> {
    let (w, h) = grid.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (src_unit, rec_unit) = match spec.kind {
        GeometryKind::Uniform => {
            let (lo, hi) = UNIFORM_WINDOW;
            let mut draw = |n: usize| -> Vec<Point> {
                (0..n).map(|_| (rng.random_range(lo..hi), rng.random_range(lo..hi))).collect()
            };
            let s = draw(spec.n_sources);
            (s, draw(spec.n_receivers))
        }
        GeometryKind::Clustered | GeometryKind::File => {
            let text = match (&spec.kind, &spec.file) {
                (GeometryKind::File, Some(f)) => read_layout(f)?,
                _ => CLUSTERED_LAYOUT.to_string(),
            };
            let (s, r) = parse_layout(&text)?;
            (take(s, spec.n_sources, "sources")?, take(r, spec.n_receivers, "receivers")?)
        }
    };
    let source = |(u, v): Point| SourceSpec { amplitude: spec.amplitude, ..SourceSpec::ricker(u * w, v * h, spec.frequency) };
    let mut geom = Geometry {
        sources: src_unit.into_iter().map(source).collect(),
        receivers: rec_unit.into_iter().map(|(u, v)| (u * w, v * h)).collect(),
    };
    if spec.augment_to > geom.n_sources() {
        augment(&mut geom, spec.augment_to, spec.jitter * w, grid, &mut rng)?;
    }
    geom.validate(grid)?;
    Ok(geom)
}

fn read_layout(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Appends jittered copies of the existing sources, cycling through them,
/// until there are `target` sources.
pub fn augment(geom: &mut Geometry, target: usize, std_dev: f64, grid: &SimGrid, rng: &mut ChaCha8Rng) -> Result<()> {
    let base = geom.n_sources();
    if base == 0 {
        return Err(Error::invalid("cannot augment an empty source list"));
    }
    let normal = Normal::new(0.0, std_dev.max(f64::MIN_POSITIVE)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut k = 0;
    while geom.n_sources() < target {
        let parent = geom.sources[k % base];
        k += 1;
        let placed = (0..MAX_REDRAWS).find_map(|_| {
            let (x, y) = (parent.x + normal.sample(rng), parent.y + normal.sample(rng));
            grid.contains(x, y).then_some(SourceSpec { x, y, ..parent })
        });
        match placed {
            Some(s) => geom.sources.push(s),
            None => return Err(Error::invalid(format!("could not place a jittered source in {MAX_REDRAWS} draws"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n_r: usize, seed: u64) -> GeometryConfig {
        GeometryConfig { kind: GeometryKind::Uniform, n_receivers: n_r, seed, ..GeometryConfig::default() }
    }

    #[test]
    fn same_seed_same_geometry() {
        let g = SimGrid::default();
        assert_eq!(gen_geometry(&uniform(30, 4), &g).unwrap(), gen_geometry(&uniform(30, 4), &g).unwrap());
        assert_ne!(gen_geometry(&uniform(30, 4), &g).unwrap(), gen_geometry(&uniform(30, 5), &g).unwrap());
    }

    #[test]
    fn uniform_mean_is_centered() {
        let g = SimGrid::default();
        let geom = gen_geometry(&uniform(10_000, 7), &g).unwrap();
        let (w, h) = g.extent();
        let n = geom.n_receivers() as f64;
        let mx = geom.receivers.iter().map(|p| p.0).sum::<f64>() / n;
        let my = geom.receivers.iter().map(|p| p.1).sum::<f64>() / n;
        let (lo, hi) = UNIFORM_WINDOW;
        let c = 0.5 * (lo + hi);
        assert!((mx - c * w).abs() <= 0.02 * c * w);
        assert!((my - c * h).abs() <= 0.02 * c * h);
        assert!(geom.receivers.iter().all(|&(x, y)| x >= lo * w && x < hi * w && y >= lo * h && y < hi * h));
    }

    #[test]
    fn bundled_layout_is_clustered() {
        let (s, r) = parse_layout(CLUSTERED_LAYOUT).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(r.len(), 181);
        // most receivers sit in the eastern band, in any prefix
        for n in [50, 181] {
            let east = r[..n].iter().filter(|p| p.0 > 0.6).count();
            assert!(east as f64 >= 0.7 * n as f64, "{east} of {n}");
        }
    }

    #[test]
    fn augmentation_keeps_the_originals() {
        let g = SimGrid::default();
        let base = gen_geometry(&GeometryConfig { n_sources: 5, ..GeometryConfig::default() }, &g).unwrap();
        let aug = gen_geometry(&GeometryConfig { n_sources: 5, augment_to: 25, ..GeometryConfig::default() }, &g).unwrap();
        assert_eq!(aug.n_sources(), 25);
        assert_eq!(aug.sources[..5], base.sources[..]);
        assert!(aug.sources.iter().all(|s| g.contains(s.x, s.y)));
    }

    #[test]
    fn layout_errors() {
        assert!(parse_layout("S 0.5").is_err());
        assert!(parse_layout("Q 0.1 0.2").is_err());
        assert!(parse_layout("R 1.5 0.2").is_err());
        let too_many = GeometryConfig { n_sources: 9, ..GeometryConfig::default() };
        assert!(gen_geometry(&too_many, &SimGrid::default()).is_err());
    }
}
