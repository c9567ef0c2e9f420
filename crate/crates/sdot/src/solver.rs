//! Height optimizers and the reuse API.
//!
//! `optimize_heights_direct` runs Adam straight on the height vector and
//! serves as the numerical oracle: the energy is convex in the heights, so
//! its minimizer is unique (up to the additive constant removed by zero-mean
//! projection).
//!
//! `train_height_net` is the reusable solver: heights are the output of a
//! network over atom coordinates, trained by chaining the same energy
//! gradient through the network. Per iteration, each atom batch draws a
//! fresh pool of source samples that compete only within the batch; batch
//! counts are both the volume estimate and, minus the target masses, the
//! per-atom loss gradient. The loop stops when the gradient norm falls to
//! `delta` or the iteration budget runs out; the gradient norm is read from
//! the same volume estimate used for the update, so no extra sampling pass
//! is spent on the stopping rule.
//!
//! The stopping statistic is Monte Carlo noisy: its norm has a noise floor
//! of roughly `sqrt(n / samples)`, so a `delta` below that floor terminates
//! only when the noise dips low, and cannot be certified.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamParams, AdamState};
use crate::error::{invalid_input, Result};
use crate::net::{HeightNet, NetMode};
use crate::rng::{derive_seed, stream_rng};
use crate::source::SourceSpec;
use crate::target::{DiscreteTarget, HeightVector};
use crate::volume::{count_in_range, estimate_volumes, gradient_from_volumes, VolumeConfig};

/// Which competition scheme volume passes use. `Auto` picks global for small
/// targets (unbiased) and batched above [`Scheme::AUTO_GLOBAL_LIMIT`] atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Global,
    Batched,
    Auto,
}

impl Scheme {
    pub const AUTO_GLOBAL_LIMIT: usize = 1024;

    pub fn resolve(self, n_atoms: usize) -> Scheme {
        match self {
            Scheme::Auto => {
                if n_atoms <= Self::AUTO_GLOBAL_LIMIT {
                    Scheme::Global
                } else {
                    Scheme::Batched
                }
            }
            other => other,
        }
    }
}

/// Configuration shared by both optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Gradient-norm tolerance for termination.
    pub delta: f64,
    /// Iteration budget.
    pub max_iters: u64,
    /// Volume-pass configuration (samples per batch, batch size, seed). The
    /// batch count is re-derived from the target size at run time.
    pub volume: VolumeConfig,
    /// Optimizer hyperparameters.
    pub opt: AdamParams,
    /// Volume-pass competition scheme.
    pub scheme: Scheme,
    /// Batch-norm statistics mode during volume passes.
    pub volume_pass_mode: NetMode,
    /// Hidden widths of the height network.
    pub hidden: [usize; 3],
    /// Batch norm on hidden layers (off only for ablation).
    pub bn_enabled: bool,
    /// Seed for network initialization.
    pub net_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta: 1e-2,
            max_iters: 500,
            volume: VolumeConfig {
                samples_per_batch: 4096,
                atom_batches: 1,
                atom_batch_size: 512,
                seed: 0,
            },
            opt: AdamParams::default(),
            scheme: Scheme::Auto,
            volume_pass_mode: NetMode::Train,
            hidden: [512, 512, 512],
            bn_enabled: true,
            net_seed: 0,
        }
    }
}

impl TrainConfig {
    /// Apply `seed` to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.volume.seed = seed;
        self.net_seed = derive_seed(seed, 0x6e65);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(invalid_input("delta must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(invalid_input("max_iters must be >= 1"));
        }
        if self.volume.samples_per_batch == 0 {
            return Err(invalid_input("samples_per_batch must be >= 1"));
        }
        if self.volume.atom_batch_size == 0 {
            return Err(invalid_input("atom_batch_size must be >= 1"));
        }
        Ok(())
    }

    /// Volume config for pass `iteration` over `n_atoms` atoms, with the
    /// scheme resolved and the batch count re-derived.
    pub fn volume_for_pass(&self, n_atoms: usize, iteration: u64) -> VolumeConfig {
        let seed = derive_seed(self.volume.seed, iteration);
        match self.scheme.resolve(n_atoms) {
            Scheme::Global => VolumeConfig::global(self.volume.samples_per_batch, seed),
            _ => VolumeConfig::batched(
                n_atoms,
                self.volume.atom_batch_size,
                self.volume.samples_per_batch,
                seed,
            ),
        }
    }
}

/// Result of the direct height optimization.
#[derive(Debug, Clone)]
pub struct DirectOutcome {
    /// Zero-mean optimal heights.
    pub heights: HeightVector,
    pub converged: bool,
    /// Adam steps applied.
    pub iterations: u64,
    /// Norm of the last gradient estimate computed.
    pub final_grad_norm: f64,
    pub wall_seconds: f64,
}

/// Result of training the height network.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: HeightNet,
    /// Zero-mean heights over all atoms, from an inference-mode forward.
    pub heights: HeightVector,
    pub converged: bool,
    /// Adam steps applied.
    pub iterations: u64,
    pub final_grad_norm: f64,
    pub wall_seconds: f64,
}

fn check_problem(target: &DiscreteTarget, source: &SourceSpec) -> Result<()> {
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

/// Optimize the height vector itself with Adam on `w_hat - nu`, until the
/// gradient norm reaches `cfg.delta` or the iteration budget runs out. The
/// returned heights are zero-mean projected. This is the exact-solution
/// oracle the network solver is measured against.
pub fn optimize_heights_direct(
    target: &DiscreteTarget,
    source: &SourceSpec,
    cfg: &TrainConfig,
) -> Result<DirectOutcome> {
    cfg.validate()?;
    check_problem(target, source)?;
    let started = Instant::now();
    let n = target.len();
    let mut heights = vec![0.0; n];
    let mut adam = AdamState::new(n, cfg.opt);
    let mut converged = false;
    let mut final_norm = f64::NAN;
    for iteration in 0..cfg.max_iters {
        let vcfg = cfg.volume_for_pass(n, iteration);
        let h = HeightVector::new(heights.clone());
        let stats = estimate_volumes(source, target, &h, &vcfg)?;
        let grad = gradient_from_volumes(stats.volumes(), target.masses())?;
        final_norm = grad.norm;
        if grad.norm <= cfg.delta {
            converged = true;
            break;
        }
        adam_step(&mut heights, &grad.values, &mut adam)?;
    }
    Ok(DirectOutcome {
        heights: HeightVector::new(heights).project_zero_mean(),
        converged,
        iterations: adam.step_count(),
        final_grad_norm: final_norm,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Train the height network.
///
/// Per iteration and per atom batch: run the network forward over the batch
/// atoms to get their heights, draw a fresh pool of source samples, count the
/// within-batch winners, and feed `counts/(batches*samples) - nu` back
/// through the cached forward. Parameter gradients accumulate across batches
/// into one Adam step. Counts from different batches never mix, so each
/// batch's loss gradient is complete as soon as its counting is done.
pub fn train_height_net(
    target: &DiscreteTarget,
    source: &SourceSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_problem(target, source)?;
    let started = Instant::now();
    let n = target.len();
    let d = target.dim();
    let masses = target.masses();
    let atoms = target.atoms_flat();

    let mut net = HeightNet::new(d, cfg.hidden, cfg.bn_enabled, cfg.net_seed)?;
    let mut adam = AdamState::new(net.param_count(), cfg.opt);

    let scheme = cfg.scheme.resolve(n);
    let batch_size = match scheme {
        Scheme::Global => n,
        _ => cfg.volume.atom_batch_size.min(n),
    };
    let n_batches = n.div_ceil(batch_size);
    let samples_per_batch = cfg.volume.samples_per_batch;
    let total_samples = (n_batches * samples_per_batch) as f64;
    let use_batch_stats = cfg.volume_pass_mode == NetMode::Train;

    let mut converged = false;
    let mut final_norm = f64::NAN;
    for iteration in 0..cfg.max_iters {
        let pass_seed = derive_seed(cfg.volume.seed, iteration);
        let mut norm_sq = 0.0;
        let mut param_grads = vec![0.0; adam.len()];
        let mut any_backward = false;
        for k in 0..n_batches {
            let lo = k * batch_size;
            let hi = ((k + 1) * batch_size).min(n);
            let batch_atoms = &atoms[lo * d..hi * d];

            // A single atom wins its batch no matter its height, so the
            // network only enters the picture for batches of two or more.
            let heights_batch = if hi - lo > 1 {
                Some(net.forward_cached(batch_atoms, use_batch_stats)?)
            } else {
                None
            };

            let samples = source.sample(samples_per_batch, &mut stream_rng(pass_seed, k as u64));
            let counts = match &heights_batch {
                Some(hb) => {
                    let mut full = vec![0.0; n];
                    full[lo..hi].copy_from_slice(hb);
                    let tmp = count_in_range(&samples, target, &full, lo, hi);
                    tmp[lo..hi].to_vec()
                }
                None => vec![samples_per_batch as u64],
            };

            // Per-atom gradient: counts only ever come from this batch.
            let grad_batch: Vec<f64> = counts
                .iter()
                .zip(&masses[lo..hi])
                .map(|(&c, &nu)| c as f64 / total_samples - nu)
                .collect();
            norm_sq += grad_batch.iter().map(|g| g * g).sum::<f64>();

            if heights_batch.is_some() {
                let g = net.backward(&grad_batch)?;
                for (acc, gi) in param_grads.iter_mut().zip(g) {
                    *acc += gi;
                }
                any_backward = true;
            } else if grad_batch[0].abs() > 0.0 {
                // A singleton batch with nonzero gradient still needs its
                // height differentiated, which requires batch norm to run on
                // running statistics.
                if cfg.bn_enabled && use_batch_stats {
                    return Err(invalid_input(
                        "atom batch of size 1 cannot train with batch-norm batch statistics",
                    ));
                }
                net.forward_cached(batch_atoms, false)?;
                let g = net.backward(&grad_batch)?;
                for (acc, gi) in param_grads.iter_mut().zip(g) {
                    *acc += gi;
                }
                any_backward = true;
            }
        }
        final_norm = norm_sq.sqrt();
        if final_norm <= cfg.delta {
            converged = true;
            break;
        }
        if any_backward {
            let mut params = net.flat_params();
            adam_step(&mut params, &param_grads, &mut adam)?;
            net.set_flat_params(&params)?;
            net.bump_train_steps();
        }
    }

    net.set_mode(NetMode::Infer);
    let heights = predict_heights(&net, target)?;
    Ok(TrainOutcome {
        net,
        heights,
        converged,
        iterations: adam.step_count(),
        final_grad_norm: final_norm,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Heights for an arbitrary atom set from the trained network: one
/// inference-mode forward pass, centered over the queried atoms. No
/// optimizer state exists here, so the network's step counter is untouched
/// by construction.
pub fn predict_heights(net: &HeightNet, all_atoms: &DiscreteTarget) -> Result<HeightVector> {
    if all_atoms.dim() != net.dim() {
        return Err(invalid_input(format!(
            "atoms have dimension {}, network expects {}",
            all_atoms.dim(),
            net.dim()
        )));
    }
    predict_heights_flat(net, all_atoms.atoms_flat())
}

/// Like [`predict_heights`] but on a raw flat atom buffer. Prediction does
/// not require the atoms to form a valid measure, so duplicates are allowed
/// here (equal inputs get equal heights).
pub fn predict_heights_flat(net: &HeightNet, atoms: &[f64]) -> Result<HeightVector> {
    let raw = net.infer(atoms)?;
    Ok(HeightVector::new(raw).project_zero_mean())
}

/// Reuse error report: how far the predicted heights sit from the direct
/// oracle on the full target, split into in-sample and held-out parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReuseErrorReport {
    /// L2 error over the trained atoms (epsilon).
    pub in_sample_error: f64,
    /// Number of held-out atoms (m).
    pub held_out_count: usize,
    /// Absolute height error per held-out atom.
    pub held_out_errors: Vec<f64>,
    /// Empirical tau_1: the largest held-out error (0 when m = 0).
    pub tau1: f64,
    /// sqrt(eps^2 + m * tau1^2); bounds the full L2 error by construction.
    pub bound: f64,
    /// Observed L2 error over all atoms.
    pub full_error: f64,
    /// False when the oracle failed to converge; the numbers are then not
    /// trustworthy.
    pub usable: bool,
    pub oracle_iterations: u64,
    pub oracle_grad_norm: f64,
}

/// Compare predicted heights against the direct oracle on the full target.
/// Both vectors are zero-mean aligned before differencing. `trained_subset`
/// holds the indices that received supervision during training.
pub fn reuse_error_report(
    net: &HeightNet,
    full_target: &DiscreteTarget,
    trained_subset: &[usize],
    source: &SourceSpec,
    cfg: &TrainConfig,
) -> Result<ReuseErrorReport> {
    let n = full_target.len();
    let mut in_sample = vec![false; n];
    for &i in trained_subset {
        if i >= n {
            return Err(invalid_input(format!("trained index {i} out of range")));
        }
        if in_sample[i] {
            return Err(invalid_input(format!("trained index {i} listed twice")));
        }
        in_sample[i] = true;
    }
    if trained_subset.is_empty() {
        return Err(invalid_input("trained subset must not be empty"));
    }

    let oracle = optimize_heights_direct(full_target, source, cfg)?;
    let predicted = predict_heights(net, full_target)?;
    let h = predicted.values();
    let h_star = oracle.heights.values();

    let mut eps_sq = 0.0;
    let mut held_out_errors = Vec::new();
    let mut full_sq = 0.0;
    for i in 0..n {
        let d = h[i] - h_star[i];
        full_sq += d * d;
        if in_sample[i] {
            eps_sq += d * d;
        } else {
            held_out_errors.push(d.abs());
        }
    }
    let tau1 = held_out_errors.iter().cloned().fold(0.0, f64::max);
    let m = held_out_errors.len();
    Ok(ReuseErrorReport {
        in_sample_error: eps_sq.sqrt(),
        held_out_count: m,
        held_out_errors,
        tau1,
        bound: (eps_sq + m as f64 * tau1 * tau1).sqrt(),
        full_error: full_sq.sqrt(),
        usable: oracle.converged,
        oracle_iterations: oracle.iterations,
        oracle_grad_norm: oracle.final_grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::checkpoint_bytes;

    fn fast_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            delta: 6e-3,
            max_iters: 800,
            volume: VolumeConfig {
                samples_per_batch: 100_000,
                atom_batches: 1,
                atom_batch_size: 512,
                seed,
            },
            opt: AdamParams::with_lr(0.01),
            hidden: [32, 32, 32],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn direct_recovers_symmetric_1d_heights() {
        let t = DiscreteTarget::new(vec![-1.0, 1.0], vec![0.5, 0.5], 1).unwrap();
        let s = SourceSpec::uniform_cube(1, -1.0, 1.0).unwrap();
        let out = optimize_heights_direct(&t, &s, &fast_cfg(3)).unwrap();
        assert!(out.converged);
        for v in out.heights.values() {
            assert!(v.abs() <= 0.02, "heights {:?}", out.heights.values());
        }
    }

    #[test]
    fn direct_recovers_analytic_unbalanced_heights() {
        // nu = (0.3, 0.7) on atoms {0, 1}, uniform [0, 1]: boundary at
        // x = h1 - h2 = 0.3, so centered heights are (0.15, -0.15).
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let s = SourceSpec::uniform_cube(1, 0.0, 1.0).unwrap();
        let out = optimize_heights_direct(&t, &s, &fast_cfg(5)).unwrap();
        assert!(out.converged, "norm {}", out.final_grad_norm);
        let h = out.heights.values();
        assert!((h[0] - 0.15).abs() <= 0.02, "{h:?}");
        assert!((h[1] + 0.15).abs() <= 0.02, "{h:?}");
    }

    #[test]
    fn direct_recovers_symmetric_2d_heights() {
        let t = DiscreteTarget::new(vec![-1.0, 0.0, 1.0, 0.0], vec![0.5, 0.5], 2).unwrap();
        let s = SourceSpec::uniform_cube(2, -1.0, 1.0).unwrap();
        let out = optimize_heights_direct(&t, &s, &fast_cfg(7)).unwrap();
        assert!(out.converged);
        for v in out.heights.values() {
            assert!(v.abs() <= 0.02);
        }
    }

    #[test]
    fn direct_reports_non_convergence() {
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let s = SourceSpec::uniform_cube(1, 0.0, 1.0).unwrap();
        let mut cfg = fast_cfg(1);
        cfg.max_iters = 2;
        cfg.delta = 1e-9;
        let out = optimize_heights_direct(&t, &s, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.final_grad_norm.is_finite());
    }

    #[test]
    fn single_atom_training_converges_at_iteration_zero() {
        let t = DiscreteTarget::new(vec![0.25, -0.5], vec![1.0], 2).unwrap();
        let s = SourceSpec::uniform_cube(2, -1.0, 1.0).unwrap();
        let out = train_height_net(&t, &s, &fast_cfg(11)).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.final_grad_norm, 0.0);
        assert_eq!(out.net.train_steps(), 0);
        assert_eq!(out.heights.values(), &[0.0]);
    }

    #[test]
    fn net_training_matches_analytic_pair() {
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let s = SourceSpec::uniform_cube(1, 0.0, 1.0).unwrap();
        let out = train_height_net(&t, &s, &fast_cfg(13)).unwrap();
        assert!(out.converged, "norm {}", out.final_grad_norm);
        let h = out.heights.values();
        assert!((h[0] - 0.15).abs() <= 0.02, "{h:?}");
        assert!((h[1] + 0.15).abs() <= 0.02, "{h:?}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let t = DiscreteTarget::new(vec![0.0, 0.6, 1.0, 0.2], vec![0.5, 0.5], 2).unwrap();
        let s = SourceSpec::uniform_cube(2, -0.5, 1.5).unwrap();
        let mut cfg = fast_cfg(17);
        cfg.max_iters = 20;
        cfg.delta = 1e-12; // force the full budget
        cfg.volume.samples_per_batch = 2048;
        let a = train_height_net(&t, &s, &cfg).unwrap();
        let b = train_height_net(&t, &s, &cfg).unwrap();
        assert_eq!(
            checkpoint_bytes(&a.net, None).unwrap(),
            checkpoint_bytes(&b.net, None).unwrap()
        );
        assert_eq!(a.heights.values(), b.heights.values());
    }

    #[test]
    fn predict_equals_training_exit_heights() {
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let s = SourceSpec::uniform_cube(1, 0.0, 1.0).unwrap();
        let mut cfg = fast_cfg(19);
        cfg.max_iters = 30;
        cfg.volume.samples_per_batch = 2048;
        let out = train_height_net(&t, &s, &cfg).unwrap();
        let again = predict_heights(&out.net, &t).unwrap();
        let exit_bits: Vec<u64> = out.heights.values().iter().map(|v| v.to_bits()).collect();
        let pred_bits: Vec<u64> = again.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(exit_bits, pred_bits);
        assert_eq!(out.net.train_steps(), out.iterations);
    }

    #[test]
    fn predict_gives_equal_heights_to_duplicate_atoms() {
        let net = HeightNet::new(2, [8, 8, 8], true, 23).unwrap();
        let h = predict_heights_flat(&net, &[0.3, 0.4, 0.3, 0.4, 1.0, -1.0]).unwrap();
        assert_eq!(h.values()[0].to_bits(), h.values()[1].to_bits());
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let net = HeightNet::new(2, [8, 8, 8], true, 23).unwrap();
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.5, 0.5], 1).unwrap();
        assert!(predict_heights(&net, &t).is_err());
    }

    #[test]
    fn reuse_report_with_full_subset_reduces_to_in_sample_error() {
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let s = SourceSpec::uniform_cube(1, 0.0, 1.0).unwrap();
        let cfg = fast_cfg(29);
        let out = train_height_net(&t, &s, &cfg).unwrap();
        let report = reuse_error_report(&out.net, &t, &[0, 1], &s, &cfg).unwrap();
        assert!(report.usable);
        assert_eq!(report.held_out_count, 0);
        assert!(report.held_out_errors.is_empty());
        assert_eq!(report.tau1, 0.0);
        assert!((report.bound - report.in_sample_error).abs() < 1e-15);
        // Both optimizers converged to delta-scale: the gap is small.
        assert!(report.in_sample_error <= 0.05, "eps = {}", report.in_sample_error);
        // The bound holds by construction.
        assert!(report.full_error <= report.bound + 1e-12);
    }

    #[test]
    fn reuse_report_validates_subset() {
        let t = DiscreteTarget::new(vec![0.0, 1.0], vec![0.3, 0.7], 1).unwrap();
        let s = SourceSpec::uniform_cube(1, 0.0, 1.0).unwrap();
        let net = HeightNet::new(1, [8, 8, 8], true, 1).unwrap();
        let cfg = fast_cfg(31);
        assert!(reuse_error_report(&net, &t, &[], &s, &cfg).is_err());
        assert!(reuse_error_report(&net, &t, &[0, 0], &s, &cfg).is_err());
        assert!(reuse_error_report(&net, &t, &[7], &s, &cfg).is_err());
    }
}
