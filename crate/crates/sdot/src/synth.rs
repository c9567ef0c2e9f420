//! Synthetic measure generators and the mode-collapse metric suite.
//!
//! The two benchmark mixtures are the usual 2D ring (eight spherical
//! Gaussians on the unit circle, sigma 1e-2) and 2D grid (twenty-five
//! spherical Gaussians on a 5x5 lattice, sigma 0.05). Metrics per sample
//! batch: number of modes captured, fraction of high-quality samples (within
//! three standard deviations of the nearest mode), and the reverse KL
//! divergence between the induced mode histogram and the uniform real
//! distribution.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::rng::{seed_rng, stream_rng};
use crate::source::SourceSpec;
use crate::target::DiscreteTarget;

/// A spherical Gaussian mixture with equal weights: mode means plus one
/// shared per-dimension standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    /// Flat row-major 2D mode means.
    pub means: Vec<f64>,
    /// Per-dimension standard deviation.
    pub sigma: f64,
}

impl ModeSpec {
    /// Eight modes at `(cos(2*pi*i/8), sin(2*pi*i/8))`, sigma 1e-2.
    pub fn ring() -> Self {
        let mut means = Vec::with_capacity(16);
        for i in 0..8 {
            let a = 2.0 * PI * i as f64 / 8.0;
            means.push(a.cos());
            means.push(a.sin());
        }
        ModeSpec { means, sigma: 1e-2 }
    }

    /// Twenty-five modes at `(-4 + 2i, -4 + 2j)`, sigma 0.05.
    pub fn grid() -> Self {
        let mut means = Vec::with_capacity(50);
        for i in 0..5 {
            for j in 0..5 {
                means.push(-4.0 + 2.0 * i as f64);
                means.push(-4.0 + 2.0 * j as f64);
            }
        }
        ModeSpec { means, sigma: 0.05 }
    }

    pub fn mode_count(&self) -> usize {
        self.means.len() / 2
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * 2..(i + 1) * 2]
    }
}

/// Draw labeled samples: each point picks a mode uniformly, then adds
/// spherical Gaussian noise. Returns flat row-major points and mode labels.
pub fn sample_mixture(spec: &ModeSpec, count: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let k = spec.mode_count();
    let mut rng = seed_rng(seed);
    let mut points = Vec::with_capacity(count * 2);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let mode = rng.random_range(0..k);
        let mean = spec.mean(mode);
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        points.push(mean[0] + spec.sigma * zx);
        points.push(mean[1] + spec.sigma * zy);
        labels.push(mode);
    }
    (points, labels)
}

/// Mode-collapse metrics for one generated batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub modes_captured: usize,
    pub high_quality_fraction: f64,
    pub reverse_kl: f64,
}

/// Evaluate generated samples against the mixture at the standard 3-sigma
/// high-quality threshold.
pub fn evaluate_modes(generated: &[f64], spec: &ModeSpec) -> Result<MetricReport> {
    evaluate_modes_with_threshold(generated, spec, 3.0)
}

/// Evaluate with a custom high-quality threshold of `k_sigma` standard
/// deviations. Each sample is assigned to its nearest mode; a mode counts as
/// captured when at least one high-quality sample lands on it; the reverse
/// KL compares the all-sample mode histogram against the uniform real
/// distribution (`0 * log 0 = 0`).
pub fn evaluate_modes_with_threshold(
    generated: &[f64],
    spec: &ModeSpec,
    k_sigma: f64,
) -> Result<MetricReport> {
    if generated.is_empty() {
        return Err(invalid_input("cannot evaluate an empty sample batch"));
    }
    if generated.len() % 2 != 0 {
        return Err(invalid_input("generated samples must be 2D points"));
    }
    let k = spec.mode_count();
    let threshold_sq = (k_sigma * spec.sigma) * (k_sigma * spec.sigma);
    let mut assigned = vec![0usize; k];
    let mut high_quality = vec![0usize; k];
    let mut hq_total = 0usize;
    for p in generated.chunks_exact(2) {
        let mut best = f64::INFINITY;
        let mut mode = 0;
        for i in 0..k {
            let m = spec.mean(i);
            let dx = p[0] - m[0];
            let dy = p[1] - m[1];
            let d2 = dx * dx + dy * dy;
            if d2 < best {
                best = d2;
                mode = i;
            }
        }
        assigned[mode] += 1;
        if best <= threshold_sq {
            high_quality[mode] += 1;
            hq_total += 1;
        }
    }
    let total = (generated.len() / 2) as f64;
    let uniform = 1.0 / k as f64;
    let mut reverse_kl = 0.0;
    for &count in &assigned {
        if count > 0 {
            let p = count as f64 / total;
            reverse_kl += p * (p / uniform).ln();
        }
    }
    Ok(MetricReport {
        modes_captured: high_quality.iter().filter(|&&c| c > 0).count(),
        high_quality_fraction: hq_total as f64 / total,
        reverse_kl,
    })
}

/// Benchmark problem: atoms at the mode means with uniform masses, plus the
/// source measure samples are transported from.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub spec: ModeSpec,
    pub target: DiscreteTarget,
    pub source: SourceSpec,
}

/// Ring benchmark: 8 atoms on the unit circle, uniform source on
/// `[-1.5, 1.5]^2`.
pub fn ring_benchmark() -> Benchmark {
    let spec = ModeSpec::ring();
    let target = DiscreteTarget::with_uniform_masses(spec.means.clone(), 2)
        .expect("ring atoms are valid");
    let source = SourceSpec::uniform_cube(2, -1.5, 1.5).expect("valid box");
    Benchmark { name: "ring", spec, target, source }
}

/// Grid benchmark: 25 atoms on the lattice, uniform source on `[-6, 6]^2`.
/// The margin around the lattice makes the optimal heights non-constant
/// (corner cells would otherwise be oversized).
pub fn grid_benchmark() -> Benchmark {
    let spec = ModeSpec::grid();
    let target = DiscreteTarget::with_uniform_masses(spec.means.clone(), 2)
        .expect("grid atoms are valid");
    let source = SourceSpec::uniform_cube(2, -6.0, 6.0).expect("valid box");
    Benchmark { name: "grid", spec, target, source }
}

pub fn benchmark_by_name(name: &str) -> Result<Benchmark> {
    match name {
        "ring" => Ok(ring_benchmark()),
        "grid" => Ok(grid_benchmark()),
        other => Err(invalid_input(format!("unknown dataset {other:?} (expected ring or grid)"))),
    }
}

/// Fixed constants describing the two class-conditional Gaussian mixtures of
/// the domain-adaptation toy problem. The target domain is the source
/// constellation rotated about its centroid and shifted. Versioned so that
/// reported accuracies stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaConfig {
    pub version: String,
    /// Class means of the source domain, flat row-major 2D.
    pub class_means: Vec<f64>,
    /// Per-class spherical standard deviation.
    pub class_sigmas: Vec<f64>,
    /// Rotation of the target constellation about its centroid, degrees.
    pub rotation_deg: f64,
    /// Translation applied to the target constellation.
    pub shift: [f64; 2],
}

impl Default for DaConfig {
    fn default() -> Self {
        DaConfig {
            version: "v1".into(),
            // Equilateral-ish triangle, side 5, unit sigmas.
            class_means: vec![0.0, 0.0, 5.0, 0.0, 2.5, 4.33],
            class_sigmas: vec![1.0, 1.0, 1.0],
            rotation_deg: 25.0,
            shift: [0.6, 0.3],
        }
    }
}

impl DaConfig {
    pub fn classes(&self) -> usize {
        self.class_sigmas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_means.len() != 2 * self.class_sigmas.len() || self.class_sigmas.is_empty() {
            return Err(invalid_input("class means and sigmas disagree"));
        }
        if self.class_sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid_input("class sigmas must be > 0"));
        }
        Ok(())
    }

    /// Target-domain class means: rotated about the source centroid, shifted.
    pub fn target_means(&self) -> Vec<f64> {
        let k = self.classes();
        let (mut cx, mut cy) = (0.0, 0.0);
        for m in self.class_means.chunks_exact(2) {
            cx += m[0];
            cy += m[1];
        }
        cx /= k as f64;
        cy /= k as f64;
        let theta = self.rotation_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let mut out = Vec::with_capacity(self.class_means.len());
        for m in self.class_means.chunks_exact(2) {
            let dx = m[0] - cx;
            let dy = m[1] - cy;
            out.push(cx + cos * dx - sin * dy + self.shift[0]);
            out.push(cy + sin * dx + cos * dy + self.shift[1]);
        }
        out
    }
}

/// A labeled 2D point set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledPoints {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// CSV rows `x,y,label` with a header.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "x,y,label")?;
        for (p, l) in self.points.chunks_exact(2).zip(&self.labels) {
            writeln!(w, "{},{},{}", p[0], p[1], l)?;
        }
        Ok(())
    }
}

fn sample_class_mixture(
    means: &[f64],
    sigmas: &[f64],
    count: usize,
    seed: u64,
) -> LabeledPoints {
    let classes = sigmas.len();
    // Near-equal split: class c gets one extra point while the remainder lasts.
    let sizes: Vec<usize> = (0..classes)
        .map(|c| count / classes + usize::from(c < count % classes))
        .collect();
    let mut rng = stream_rng(seed, 1);
    let mut points = Vec::with_capacity(count * 2);
    let mut labels = Vec::with_capacity(count);
    for c in 0..classes {
        let m = &means[c * 2..c * 2 + 2];
        for _ in 0..sizes[c] {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            points.push(m[0] + sigmas[c] * zx);
            points.push(m[1] + sigmas[c] * zy);
            labels.push(c);
        }
    }
    // Deterministic shuffle so class blocks do not line up with atom batches.
    let n = labels.len();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
        points.swap(i * 2, j * 2);
        points.swap(i * 2 + 1, j * 2 + 1);
    }
    LabeledPoints { points, labels }
}

/// Generate the two labeled domains: `count` points each, split near-equally
/// into classes, source and target drawn from their respective mixtures.
pub fn make_da_dataset(
    cfg: &DaConfig,
    count: usize,
    seed: u64,
) -> Result<(LabeledPoints, LabeledPoints)> {
    cfg.validate()?;
    if count == 0 {
        return Err(invalid_input("count must be >= 1"));
    }
    let source = sample_class_mixture(&cfg.class_means, &cfg.class_sigmas, count, seed);
    let target_means = cfg.target_means();
    let target = sample_class_mixture(
        &target_means,
        &cfg.class_sigmas,
        count,
        crate::rng::derive_seed(seed, 0xda),
    );
    Ok((source, target))
}
