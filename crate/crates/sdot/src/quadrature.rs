//! Dense-grid reference volumes for low-dimensional targets.
//!
//! This is the brute-force route used to cross-check the Monte Carlo
//! estimators: integrate each cell's source mass over a regular grid (or, for
//! an explicit-sample source, enumerate the samples). It deliberately keeps
//! its own inline argmax instead of calling into `envelope`, so the two paths
//! stay independent of each other.
//!
//! Intended for `d <= 2` and small atom counts; cost grows as
//! `grid_per_axis^d * n`.

use crate::error::{invalid_input, Result};
use crate::source::SourceSpec;
use crate::target::DiscreteTarget;

/// How many standard deviations of a Gaussian source the grid covers.
const GAUSSIAN_SUPPORT_SIGMAS: f64 = 7.0;

fn winner(x: &[f64], target: &DiscreteTarget, heights: &[f64], lo: usize, hi: usize) -> usize {
    let d = target.dim();
    let atoms = target.atoms_flat();
    let mut best = f64::NEG_INFINITY;
    let mut win = lo;
    for i in lo..hi {
        let mut s = heights[i];
        for c in 0..d {
            s += x[c] * atoms[i * d + c];
        }
        if s > best {
            best = s;
            win = i;
        }
    }
    win
}

/// Reference volumes under global competition (all atoms at once).
pub fn reference_volumes(
    source: &SourceSpec,
    target: &DiscreteTarget,
    heights: &[f64],
    grid_per_axis: usize,
) -> Result<Vec<f64>> {
    reference_volumes_batched(source, target, heights, target.len(), grid_per_axis)
}

/// Reference volumes under within-batch competition: atoms are split into
/// consecutive batches of `batch_size` and each batch is integrated as its
/// own sub-problem; masses are normalized by the number of batches.
pub fn reference_volumes_batched(
    source: &SourceSpec,
    target: &DiscreteTarget,
    heights: &[f64],
    batch_size: usize,
    grid_per_axis: usize,
) -> Result<Vec<f64>> {
    let n = target.len();
    if heights.len() != n {
        return Err(invalid_input("heights length does not match target"));
    }
    if batch_size == 0 {
        return Err(invalid_input("batch size must be >= 1"));
    }
    let n_batches = n.div_ceil(batch_size);
    let mut volumes = vec![0.0; n];
    for k in 0..n_batches {
        let lo = k * batch_size;
        let hi = ((k + 1) * batch_size).min(n);
        accumulate_batch(source, target, heights, lo, hi, grid_per_axis, &mut volumes)?;
    }
    let scale = 1.0 / n_batches as f64;
    for v in &mut volumes {
        *v *= scale;
    }
    Ok(volumes)
}

/// Integrate one batch's cell masses (each batch totals 1 before scaling).
fn accumulate_batch(
    source: &SourceSpec,
    target: &DiscreteTarget,
    heights: &[f64],
    lo: usize,
    hi: usize,
    grid_per_axis: usize,
    volumes: &mut [f64],
) -> Result<()> {
    let d = target.dim();
    if source.dim() != d {
        return Err(invalid_input("source and target dimensions differ"));
    }
    match source {
        SourceSpec::ExplicitSamples { points, dim } => {
            let m = points.len() / dim;
            let w = 1.0 / m as f64;
            for x in points.chunks_exact(*dim) {
                volumes[winner(x, target, heights, lo, hi)] += w;
            }
            Ok(())
        }
        SourceSpec::UniformBox { low, high } => {
            if d > 2 {
                return Err(invalid_input("grid quadrature supports d <= 2"));
            }
            let g = grid_per_axis;
            let cell_w = 1.0 / (g as f64).powi(d as i32);
            let step: Vec<f64> = (0..d).map(|c| (high[c] - low[c]) / g as f64).collect();
            let mut x = vec![0.0; d];
            if d == 1 {
                for i in 0..g {
                    x[0] = low[0] + (i as f64 + 0.5) * step[0];
                    volumes[winner(&x, target, heights, lo, hi)] += cell_w;
                }
            } else {
                for i in 0..g {
                    x[0] = low[0] + (i as f64 + 0.5) * step[0];
                    for j in 0..g {
                        x[1] = low[1] + (j as f64 + 0.5) * step[1];
                        volumes[winner(&x, target, heights, lo, hi)] += cell_w;
                    }
                }
            }
            Ok(())
        }
        SourceSpec::Gaussian { mean, var_diag } => {
            if d > 2 {
                return Err(invalid_input("grid quadrature supports d <= 2"));
            }
            let g = grid_per_axis;
            // Midpoint rule over mean +- k sigma, weights from the density,
            // normalized so each batch integrates to exactly 1.
            let sd: Vec<f64> = var_diag.iter().map(|v| v.sqrt()).collect();
            let lows: Vec<f64> = (0..d).map(|c| mean[c] - GAUSSIAN_SUPPORT_SIGMAS * sd[c]).collect();
            let steps: Vec<f64> = (0..d).map(|c| 2.0 * GAUSSIAN_SUPPORT_SIGMAS * sd[c] / g as f64).collect();
            let axis_w: Vec<Vec<f64>> = (0..d)
                .map(|c| {
                    (0..g)
                        .map(|i| {
                            let x = lows[c] + (i as f64 + 0.5) * steps[c];
                            let z = (x - mean[c]) / sd[c];
                            (-0.5 * z * z).exp()
                        })
                        .collect()
                })
                .collect();
            let mut x = vec![0.0; d];
            let mut total = 0.0;
            let mut masses = vec![0.0; volumes.len()];
            if d == 1 {
                for i in 0..g {
                    x[0] = lows[0] + (i as f64 + 0.5) * steps[0];
                    let w = axis_w[0][i];
                    masses[winner(&x, target, heights, lo, hi)] += w;
                    total += w;
                }
            } else {
                for i in 0..g {
                    x[0] = lows[0] + (i as f64 + 0.5) * steps[0];
                    for j in 0..g {
                        x[1] = lows[1] + (j as f64 + 0.5) * steps[1];
                        let w = axis_w[0][i] * axis_w[1][j];
                        masses[winner(&x, target, heights, lo, hi)] += w;
                        total += w;
                    }
                }
            }
            for (v, m) in volumes.iter_mut().zip(&masses) {
                *v += m / total;
            }
            Ok(())
        }
    }
}
