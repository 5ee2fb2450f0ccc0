//! SetConv encoder: fuses context sets of any modality into one gridded
//! tensor. Each context set contributes a density channel (sum of
//! unit-amplitude Gaussian bumps at the observation locations, evaluated on
//! the internal grid) followed by one data channel per value dimension
//! (the same bumps weighted by the observed values).

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::tasks::ContextSet;

/// Gridded encoding of the context sets over the internal grid.
#[derive(Debug, Clone)]
pub struct GridEncoding {
    pub channels: Array3<f64>,
    pub ppu: usize,
}

/// Internal grid nodes per side for a points-per-unit density over the
/// `[-1, 1]` domain (cell-centered, spacing exactly `1/ppu`).
pub fn grid_side(ppu: usize) -> Result<usize> {
    let n = 2 * ppu;
    if n < 4 {
        return Err(Error::InvalidConfig(format!(
            "points-per-unit {ppu} yields a {n}x{n} internal grid; need at least 4x4"
        )));
    }
    Ok(n)
}

/// Coordinate of internal-grid node `i` along one axis.
pub fn grid_coord(i: usize, ppu: usize) -> f64 {
    -1.0 + (i as f64 + 0.5) / ppu as f64
}

/// Gaussian bump weights from one scattered coordinate to every grid node
/// along an axis.
fn axis_weights(x: f64, ppu: usize, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_iter((0..n).map(|i| {
        let d = grid_coord(i, ppu) - x;
        (-d * d / (2.0 * scale * scale)).exp()
    }))
}

/// Canonical accumulation order so the encoding is bit-identical under
/// permutations of the context points.
fn canonical_order(cs: &ContextSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cs.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |p: usize| {
            let mut k = vec![cs.locations[[p, 0]], cs.locations[[p, 1]]];
            k.extend(cs.values.row(p).iter());
            k
        };
        let (ka, kb) = (key(a), key(b));
        ka.iter()
            .zip(kb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != std::cmp::Ordering::Equal)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

/// Encode one context set as `1 + channels` grid channels (density first).
fn encode_one(cs: &ContextSet, ppu: usize, n: usize, scale: f64) -> Array3<f64> {
    let ch = cs.channels();
    let mut out = Array3::<f64>::zeros((1 + ch, n, n));
    for p in canonical_order(cs) {
        let w1 = axis_weights(cs.locations[[p, 0]], ppu, n, scale);
        let w2 = axis_weights(cs.locations[[p, 1]], ppu, n, scale);
        for i in 0..n {
            if w1[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = w1[i] * w2[j];
                out[[0, i, j]] += w;
                for c in 0..ch {
                    out[[1 + c, i, j]] += w * cs.values[[p, c]];
                }
            }
        }
    }
    out
}

/// Fuse all context sets into a single gridded encoding. Channel order is
/// `[density_1, data_1.., density_2, data_2..]`.
pub fn setconv_encode(
    contexts: &[ContextSet],
    ppu: usize,
    scales: &[f64],
) -> Result<GridEncoding> {
    if contexts.is_empty() {
        return Err(Error::EmptyContext("setconv needs at least one context set".into()));
    }
    if contexts.len() != scales.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} context sets but {} setconv scales",
            contexts.len(),
            scales.len()
        )));
    }
    let n = grid_side(ppu)?;
    for cs in contexts {
        for row in cs.locations.rows() {
            if row[0].abs() > 1.0 + 1e-12 || row[1].abs() > 1.0 + 1e-12 {
                return Err(Error::OutOfDomain(format!(
                    "context location ({}, {})",
                    row[0], row[1]
                )));
            }
        }
    }
    let parts: Vec<Array3<f64>> = contexts
        .iter()
        .zip(scales.iter())
        .map(|(cs, &s)| encode_one(cs, ppu, n, s))
        .collect();
    let views: Vec<_> = parts.iter().map(Array3::view).collect();
    let channels = ndarray::concatenate(Axis(0), &views).expect("matching grid shapes");
    Ok(GridEncoding { channels, ppu })
}

/// Locations of all internal grid nodes, row-major; used by tests and by
/// prior-covariance visualizations.
pub fn internal_grid_locations(ppu: usize) -> Result<Array2<f64>> {
    let n = grid_side(ppu)?;
    let mut out = Array2::<f64>::zeros((n * n, 2));
    for i in 0..n {
        for j in 0..n {
            out[[i * n + j, 0]] = grid_coord(i, ppu);
            out[[i * n + j, 1]] = grid_coord(j, ppu);
        }
    }
    Ok(out)
}
