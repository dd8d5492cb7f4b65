//! Reproducible Brownian path ensembles.
//!
//! Increments are generated by a counter-based stream keyed on
//! (seed, path, node, dimension), so the fill is independent of evaluation
//! order: parallel and serial fills agree bit for bit, and regenerating an
//! ensemble from (seed, grid, d, M) is exact. Gaussians come from the
//! inverse-CDF of uniform counters; see the `rng` module for the contract.

use crate::model::{ModelError, PathEnsemble, TimeGrid};
use crate::rng::CounterRng;
use rayon::prelude::*;
use std::io::Write;

type Result<T> = std::result::Result<T, ModelError>;

/// Simulate M d-dimensional Brownian paths on the grid.
pub fn simulate_ensemble(grid: &TimeGrid, d: usize, paths: usize, seed: u64) -> Result<PathEnsemble> {
    if d == 0 || paths == 0 {
        return Err(ModelError::InvalidParameter(
            "ensemble needs d >= 1 and M >= 1".into(),
        ));
    }
    let n_nodes = grid.n_nodes();
    let rng = CounterRng::new(seed);
    let widths: Vec<f64> = (0..grid.n_cells()).map(|i| grid.cell_width(i)).collect();

    let mut values = vec![0.0f64; paths * n_nodes * d];
    values
        .par_chunks_mut(n_nodes * d)
        .enumerate()
        .for_each(|(m, path)| {
            // Node 0 stays exactly zero.
            for i in 0..n_nodes - 1 {
                let sd = widths[i].sqrt();
                for j in 0..d {
                    let z = rng.normal(m as u64, i as u64, j as u64);
                    path[(i + 1) * d + j] = path[i * d + j] + sd * z;
                }
            }
        });

    Ok(PathEnsemble {
        grid: grid.clone(),
        d,
        paths,
        seed,
        antithetic: false,
        values,
    })
}

/// Double the ensemble: path M + m carries the negated increments of path m.
pub fn antithetic_pairing(ensemble: &PathEnsemble) -> PathEnsemble {
    let n_nodes = ensemble.grid.n_nodes();
    let d = ensemble.d;
    let stride = n_nodes * d;
    let mut values = Vec::with_capacity(2 * ensemble.paths * stride);
    values.extend_from_slice(&ensemble.values);
    // Paths start at 0, so negating increments negates node values.
    values.extend(ensemble.values.iter().map(|v| -v));
    PathEnsemble {
        grid: ensemble.grid.clone(),
        d,
        paths: 2 * ensemble.paths,
        seed: ensemble.seed,
        antithetic: true,
        values,
    }
}

/// Flat binary export: magic, header (d, paths, nodes, seed, antithetic),
/// grid nodes, then path values, all little-endian 64-bit.
pub fn write_binary<W: Write>(ensemble: &PathEnsemble, mut w: W) -> std::io::Result<()> {
    w.write_all(b"BSDEENS1")?;
    w.write_all(&(ensemble.d as u64).to_le_bytes())?;
    w.write_all(&(ensemble.paths as u64).to_le_bytes())?;
    w.write_all(&(ensemble.grid.n_nodes() as u64).to_le_bytes())?;
    w.write_all(&ensemble.seed.to_le_bytes())?;
    w.write_all(&(ensemble.antithetic as u64).to_le_bytes())?;
    for &t in ensemble.grid.nodes() {
        w.write_all(&t.to_le_bytes())?;
    }
    for &v in &ensemble.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
