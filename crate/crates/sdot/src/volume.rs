//! Monte Carlo estimation of cell volumes and the energy gradient.
//!
//! Two estimators are provided:
//!
//! * `estimate_volumes_global` draws one pool of samples and lets every atom
//!   compete for each sample. Unbiased.
//! * `estimate_volumes_batched` splits the atoms into consecutive batches;
//!   each batch gets a fresh pool of samples and competes only internally,
//!   with counts normalized by `batches * samples`. This is the training
//!   loop's scheme for large targets. Within-batch competition biases the
//!   volumes relative to the global argmax; which scheme produced a number is
//!   always recorded by the caller.
//!
//! Counting is an integer reduction, so parallel chunking cannot change the
//! result.

use std::io::Write;

use rayon::prelude::*;

use crate::envelope::winner_in_range;
use crate::error::{invalid_input, Result};
use crate::rng::stream_rng;
use crate::source::SourceSpec;
use crate::target::{DiscreteTarget, HeightVector};

/// Samples per parallel counting chunk. Fixed so results never depend on the
/// thread count.
const COUNT_CHUNK: usize = 8192;

/// Configuration for one volume-estimation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct VolumeConfig {
    /// Samples drawn per atom batch (`N`).
    pub samples_per_batch: usize,
    /// Number of atom batches (`B`).
    pub atom_batches: usize,
    /// Atoms per batch (`b`); the final batch may be short.
    pub atom_batch_size: usize,
    /// Root seed for the pass; per-batch streams are derived from it.
    pub seed: u64,
}

impl VolumeConfig {
    /// Single global batch: every atom competes for every sample.
    pub fn global(samples: usize, seed: u64) -> Self {
        Self {
            samples_per_batch: samples,
            atom_batches: 1,
            atom_batch_size: usize::MAX,
            seed,
        }
    }

    /// Batched scheme for `n_atoms`, with `batch_size` atoms per batch.
    pub fn batched(n_atoms: usize, batch_size: usize, samples: usize, seed: u64) -> Self {
        Self {
            samples_per_batch: samples,
            atom_batches: n_atoms.div_ceil(batch_size.max(1)),
            atom_batch_size: batch_size,
            seed,
        }
    }

    pub fn validate_for(&self, n_atoms: usize) -> Result<()> {
        if self.samples_per_batch == 0 {
            return Err(invalid_input("samples_per_batch must be >= 1"));
        }
        if self.atom_batches == 0 || self.atom_batch_size == 0 {
            return Err(invalid_input("atom_batches and atom_batch_size must be >= 1"));
        }
        let b = self.effective_batch_size(n_atoms);
        let batches = n_atoms.div_ceil(b);
        if batches != self.atom_batches {
            return Err(invalid_input(format!(
                "{} atoms split into batches of {} gives {} batches, config says {}",
                n_atoms, b, batches, self.atom_batches
            )));
        }
        Ok(())
    }

    /// Batch size clamped to the atom count (the global config uses MAX).
    pub fn effective_batch_size(&self, n_atoms: usize) -> usize {
        self.atom_batch_size.min(n_atoms)
    }
}

/// Monte Carlo estimates of per-cell source mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    counts: Vec<u64>,
    sample_count: u64,
    volumes: Vec<f64>,
}

impl CellStats {
    fn from_counts(counts: Vec<u64>, sample_count: u64) -> Self {
        let volumes = counts
            .iter()
            .map(|&c| c as f64 / sample_count as f64)
            .collect();
        Self { counts, sample_count, volumes }
    }

    /// Estimated volume of each cell. Sums to 1 exactly up to rounding of the
    /// integer ratio (every sample lands in exactly one cell).
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Diagnostic CSV: `index,count,volume`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "index,count,volume")?;
        for (i, (&c, &v)) in self.counts.iter().zip(&self.volumes).enumerate() {
            writeln!(w, "{i},{c},{v}")?;
        }
        Ok(())
    }
}

/// Count winners for samples competing among atoms `lo..hi`.
pub(crate) fn count_in_range(
    samples: &[f64],
    target: &DiscreteTarget,
    heights: &[f64],
    lo: usize,
    hi: usize,
) -> Vec<u64> {
    let d = target.dim();
    let n = target.len();
    samples
        .par_chunks(COUNT_CHUNK * d)
        .map(|chunk| {
            let mut local = vec![0u64; n];
            for x in chunk.chunks_exact(d) {
                local[winner_in_range(x, target, heights, lo, hi).0] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}

fn check_source(source: &SourceSpec, target: &DiscreteTarget) -> Result<()> {
    source.validate()?;
    if source.dim() != target.dim() {
        return Err(invalid_input(format!(
            "source dimension {} does not match target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// Estimate all cell volumes at once: `n_samples` draws, every atom competes.
pub fn estimate_volumes_global(
    source: &SourceSpec,
    target: &DiscreteTarget,
    h: &HeightVector,
    n_samples: usize,
    seed: u64,
) -> Result<CellStats> {
    check_source(source, target)?;
    h.check_pairing(target)?;
    if n_samples == 0 {
        return Err(invalid_input("sample count must be >= 1"));
    }
    let samples = source.sample(n_samples, &mut stream_rng(seed, 0));
    let counts = count_in_range(&samples, target, h.values(), 0, target.len());
    Ok(CellStats::from_counts(counts, n_samples as u64))
}

/// Estimate volumes with the batched scheme: for each consecutive atom batch,
/// draw a fresh pool of samples that compete only within the batch, then
/// normalize accumulated counts by `batches * samples_per_batch`.
pub fn estimate_volumes_batched(
    source: &SourceSpec,
    target: &DiscreteTarget,
    h: &HeightVector,
    cfg: &VolumeConfig,
) -> Result<CellStats> {
    check_source(source, target)?;
    h.check_pairing(target)?;
    let n = target.len();
    cfg.validate_for(n)?;
    let b = cfg.effective_batch_size(n);
    let mut counts = vec![0u64; n];
    for k in 0..cfg.atom_batches {
        let lo = k * b;
        let hi = ((k + 1) * b).min(n);
        let samples = source.sample(cfg.samples_per_batch, &mut stream_rng(cfg.seed, k as u64));
        let batch_counts = count_in_range(&samples, target, h.values(), lo, hi);
        for (c, bc) in counts.iter_mut().zip(batch_counts) {
            *c += bc;
        }
    }
    let total = (cfg.atom_batches * cfg.samples_per_batch) as u64;
    Ok(CellStats::from_counts(counts, total))
}

/// Run one volume pass under `cfg` against existing heights, choosing the
/// scheme by the config's batch count.
pub fn estimate_volumes(
    source: &SourceSpec,
    target: &DiscreteTarget,
    h: &HeightVector,
    cfg: &VolumeConfig,
) -> Result<CellStats> {
    if cfg.atom_batches == 1 {
        estimate_volumes_global(source, target, h, cfg.samples_per_batch, cfg.seed)
    } else {
        estimate_volumes_batched(source, target, h, cfg)
    }
}

/// The energy gradient `w_hat - nu` and its Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGradient {
    pub values: Vec<f64>,
    pub norm: f64,
}

/// Gradient of the convex transport energy: componentwise estimated volume
/// minus target mass. The norm is the training loop's termination statistic.
pub fn energy_gradient(stats: &CellStats, target: &DiscreteTarget) -> Result<EnergyGradient> {
    if stats.len() != target.len() {
        return Err(invalid_input(format!(
            "stats cover {} cells for {} atoms",
            stats.len(),
            target.len()
        )));
    }
    gradient_from_volumes(stats.volumes(), target.masses())
}

pub(crate) fn gradient_from_volumes(volumes: &[f64], masses: &[f64]) -> Result<EnergyGradient> {
    if volumes.len() != masses.len() {
        return Err(invalid_input("volume and mass vectors differ in length"));
    }
    let values: Vec<f64> = volumes.iter().zip(masses).map(|(w, v)| w - v).collect();
    let norm = values.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(EnergyGradient { values, norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{reference_volumes, reference_volumes_batched};

    fn uniform01() -> SourceSpec {
        SourceSpec::uniform_cube(1, 0.0, 1.0).unwrap()
    }

    fn pair_1d() -> DiscreteTarget {
        DiscreteTarget::new(vec![0.0, 1.0], vec![0.5, 0.5], 1).unwrap()
    }

    #[test]
    fn global_estimates_analytic_boundaries() {
        let t = pair_1d();
        let n = 65_536;
        let tol = 3.0 / (n as f64).sqrt();

        // h = (0, 0): atom 1 wins for every x > 0.
        let stats = estimate_volumes_global(&uniform01(), &t, &HeightVector::zeros(2), n, 11).unwrap();
        assert!(stats.volumes()[0] <= tol);
        assert!((stats.volumes()[1] - 1.0).abs() <= tol);

        // h = (0.5, 0): boundary at x = 0.5.
        let h = HeightVector::new(vec![0.5, 0.0]);
        let stats = estimate_volumes_global(&uniform01(), &t, &h, n, 11).unwrap();
        assert!((stats.volumes()[0] - 0.5).abs() <= tol);
        assert!((stats.volumes()[1] - 0.5).abs() <= tol);
    }

    #[test]
    fn single_atom_is_exact() {
        let t = DiscreteTarget::new(vec![2.0, 2.0], vec![1.0], 2).unwrap();
        let s = SourceSpec::uniform_cube(2, -1.0, 1.0).unwrap();
        for n in [1, 7, 100] {
            let stats =
                estimate_volumes_global(&s, &t, &HeightVector::new(vec![4.5]), n, 3).unwrap();
            assert_eq!(stats.volumes(), &[1.0]);
            assert_eq!(stats.counts(), &[n as u64]);
        }
    }

    #[test]
    fn batched_with_one_batch_equals_global() {
        let t = DiscreteTarget::new(vec![0.0, 0.4, 1.0, -0.3], vec![0.5, 0.5], 2).unwrap();
        let s = SourceSpec::uniform_cube(2, -1.0, 1.0).unwrap();
        let h = HeightVector::new(vec![0.1, -0.1]);
        let cfg = VolumeConfig::global(4096, 77);
        let batched = estimate_volumes_batched(&s, &t, &h, &cfg).unwrap();
        let global = estimate_volumes_global(&s, &t, &h, 4096, 77).unwrap();
        assert_eq!(batched, global);
    }

    #[test]
    fn singleton_batches_are_half_half_regardless_of_heights() {
        let t = pair_1d();
        let cfg = VolumeConfig::batched(2, 1, 500, 5);
        let h = HeightVector::new(vec![40.0, -3.0]);
        let stats = estimate_volumes_batched(&uniform01(), &t, &h, &cfg).unwrap();
        assert_eq!(stats.volumes(), &[0.5, 0.5]);
        assert_eq!(stats.sample_count(), 1000);
    }

    #[test]
    fn batched_grid_matches_quadrature_reference() {
        // 25-atom grid, 5 batches of 5, h = 0: each batch's cell masses come
        // from an independent dense-grid integration of the same argmax rule.
        let mut atoms = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                atoms.push(-4.0 + 2.0 * i as f64);
                atoms.push(-4.0 + 2.0 * j as f64);
            }
        }
        let t = DiscreteTarget::with_uniform_masses(atoms, 2).unwrap();
        let s = SourceSpec::uniform_cube(2, -6.0, 6.0).unwrap();
        let h = HeightVector::zeros(25);
        let n = 40_000;
        let cfg = VolumeConfig::batched(25, 5, n, 123);
        let stats = estimate_volumes_batched(&s, &t, &h, &cfg).unwrap();
        let reference = reference_volumes_batched(&s, &t, h.values(), 5, 2000).unwrap();
        let tol = 3.0 / ((5 * n) as f64).sqrt();
        for (est, re) in stats.volumes().iter().zip(&reference) {
            assert!((est - re).abs() <= tol + 1e-3, "est {est} vs reference {re}");
        }
    }

    #[test]
    fn batched_rejects_inconsistent_partition() {
        let t = pair_1d();
        let cfg = VolumeConfig {
            samples_per_batch: 10,
            atom_batches: 3,
            atom_batch_size: 1,
            seed: 0,
        };
        assert!(estimate_volumes_batched(&uniform01(), &t, &HeightVector::zeros(2), &cfg).is_err());
    }

    #[test]
    fn volumes_sum_to_one() {
        let t = DiscreteTarget::new(vec![0.0, 0.3, 0.7, 1.0], vec![0.25; 4], 1).unwrap();
        let h = HeightVector::new(vec![0.05, 0.0, -0.02, 0.01]);
        let stats = estimate_volumes_global(&uniform01(), &t, &h, 9999, 2).unwrap();
        let sum: f64 = stats.volumes().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let cfg = VolumeConfig::batched(4, 3, 1000, 2);
        let stats = estimate_volumes_batched(&uniform01(), &t, &h, &cfg).unwrap();
        let sum: f64 = stats.volumes().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_examples() {
        let t = pair_1d();
        let stats = CellStats::from_counts(vec![50, 50], 100);
        let g = energy_gradient(&stats, &t).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0]);
        assert_eq!(g.norm, 0.0);

        let t2 = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let stats = CellStats::from_counts(vec![100, 0], 100);
        let g = energy_gradient(&stats, &t2).unwrap();
        assert_eq!(g.values, vec![0.7, -0.7]);
        assert!((g.norm - 0.7 * 2.0f64.sqrt()).abs() < 1e-15);

        let short = CellStats::from_counts(vec![100], 100);
        assert!(energy_gradient(&short, &t2).is_err());
    }

    #[test]
    fn gradient_components_sum_to_zero() {
        let t = DiscreteTarget::new(vec![0.0, 0.25, 0.5, 1.0], vec![0.1, 0.2, 0.3, 0.4], 1).unwrap();
        let h = HeightVector::new(vec![0.0, 0.1, -0.1, 0.2]);
        let stats = estimate_volumes_global(&uniform01(), &t, &h, 4096, 8).unwrap();
        let g = energy_gradient(&stats, &t).unwrap();
        assert!(g.values.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn global_estimates_concentrate_around_reference() {
        // Seeded repetitions stay within 4 binomial sigmas of the quadrature
        // reference in at least 99% of runs.
        let t = DiscreteTarget::new(
            vec![0.1, 0.0, -0.6, 0.4, 0.3, -0.8, -0.1, 0.9],
            vec![0.25; 4],
            2,
        )
        .unwrap();
        let s = SourceSpec::uniform_cube(2, -1.0, 1.0).unwrap();
        let h = HeightVector::new(vec![0.12, -0.05, 0.0, 0.07]);
        let reference = reference_volumes(&s, &t, h.values(), 1100).unwrap();
        let n = 4096;
        let mut ok = 0;
        let reps = 100;
        for seed in 0..reps {
            let stats = estimate_volumes_global(&s, &t, &h, n, seed).unwrap();
            let within = stats.volumes().iter().zip(&reference).all(|(est, w)| {
                let sigma = (w * (1.0 - w) / n as f64).sqrt();
                (est - w).abs() <= 4.0 * sigma + 2e-3
            });
            if within {
                ok += 1;
            }
        }
        assert!(ok * 100 >= 99 * reps, "only {ok}/{reps} runs within bounds");
    }

    #[test]
    fn dense_volume_gradient_is_monotone() {
        // Convexity of the energy: with quadrature volumes, the gradient map
        // is monotone on random height pairs.
        let t = DiscreteTarget::new(vec![0.0, 0.2, 0.45, 0.8, 1.0], vec![0.2; 5], 1).unwrap();
        let s = uniform01();
        let mut rng = crate::rng::seed_rng(42);
        use rand::Rng;
        for _ in 0..20 {
            let h1: Vec<f64> = (0..5).map(|_| rng.random_range(-0.3..0.3)).collect();
            let h2: Vec<f64> = (0..5).map(|_| rng.random_range(-0.3..0.3)).collect();
            let w1 = reference_volumes(&s, &t, &h1, 1_000_000).unwrap();
            let w2 = reference_volumes(&s, &t, &h2, 1_000_000).unwrap();
            let g1 = gradient_from_volumes(&w1, t.masses()).unwrap();
            let g2 = gradient_from_volumes(&w2, t.masses()).unwrap();
            let dot: f64 = g1
                .values
                .iter()
                .zip(&g2.values)
                .zip(h1.iter().zip(&h2))
                .map(|((a, b), (x, y))| (a - b) * (x - y))
                .sum();
            assert!(dot >= -1e-6, "monotonicity violated: {dot}");
        }
    }

    #[test]
    fn stats_csv_has_one_row_per_cell() {
        let stats = CellStats::from_counts(vec![3, 1], 4);
        let mut buf = Vec::new();
        stats.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("0,3,0.75"));
    }
}
