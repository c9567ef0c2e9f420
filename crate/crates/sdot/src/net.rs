//! The neural height representation: a small fully connected network mapping
//! an atom's coordinates to its scalar height.
//!
//! Architecture: three hidden layers of Linear -> BatchNorm -> ReLU, then a
//! final Linear to one output. Forward and backward are explicit; the loss
//! gradient with respect to the heights is supplied from outside (it is the
//! transport energy gradient), and `backward` chains it through the network
//! with plain sum-over-atoms semantics.
//!
//! Batch norm follows the usual convention: batch statistics in training
//! mode, running statistics in inference mode, momentum 0.1, epsilon 1e-5.
//! Population (biased) variance is used both for normalization and for the
//! running estimate, so a converged network produces the same heights in
//! both modes even for small batches.
//!
//! Forward and backward are single-threaded per batch: batch-norm statistics
//! are batch-global, so a batch is one unit of work.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{invalid_input, Error, Result};
use crate::rng::seed_rng;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Whether forward passes use batch statistics (training) or running
/// statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NetMode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
struct Linear {
    w: Array2<f64>, // (out, in)
    b: Array1<f64>,
}

#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
}

/// Per-layer state cached by a training-mode forward pass.
#[derive(Debug, Clone)]
struct LayerCache {
    /// Input to the linear layer, (m, in).
    input: Array2<f64>,
    /// Normalized pre-scale activations, (m, out); hidden layers with BN only.
    x_hat: Option<Array2<f64>>,
    /// 1/sqrt(var + eps) actually used by the pass.
    inv_std: Option<Array1<f64>>,
    /// True when `x_hat` was computed from batch statistics.
    batch_stats: bool,
    /// Post-ReLU output, (m, out); hidden layers only.
    activated: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    layers: Vec<LayerCache>,
    batch_len: usize,
}

/// The height network `H_w`.
#[derive(Debug, Clone)]
pub struct HeightNet {
    widths: Vec<usize>, // [d, h1, h2, h3, 1]
    linears: Vec<Linear>,
    norms: Vec<BatchNorm>,
    bn_enabled: bool,
    mode: NetMode,
    cache: Option<ForwardCache>,
    train_steps: u64,
    init_seed: u64,
}

impl HeightNet {
    /// Fresh network for `dim`-dimensional atoms with the given hidden widths.
    /// Weights and biases are uniform in +-sqrt(1/fan_in), drawn from `seed`.
    pub fn new(dim: usize, hidden: [usize; 3], bn_enabled: bool, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid_input("network input dimension must be >= 1"));
        }
        if hidden.contains(&0) {
            return Err(invalid_input("hidden widths must be >= 1"));
        }
        let widths = vec![dim, hidden[0], hidden[1], hidden[2], 1];
        let mut rng = seed_rng(seed);
        let mut linears = Vec::with_capacity(4);
        for l in 0..4 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let mut w = Array2::zeros((fan_out, fan_in));
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
            let mut b = Array1::zeros(fan_out);
            for v in b.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
            linears.push(Linear { w, b });
        }
        let norms = if bn_enabled {
            (0..3)
                .map(|l| BatchNorm {
                    gamma: Array1::ones(widths[l + 1]),
                    beta: Array1::zeros(widths[l + 1]),
                    running_mean: Array1::zeros(widths[l + 1]),
                    running_var: Array1::ones(widths[l + 1]),
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            widths,
            linears,
            norms,
            bn_enabled,
            mode: NetMode::Train,
            cache: None,
            train_steps: 0,
            init_seed: seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.widths[0]
    }

    /// Full layer widths, `[d, h1, h2, h3, 1]`.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn bn_enabled(&self) -> bool {
        self.bn_enabled
    }

    pub fn mode(&self) -> NetMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: NetMode) {
        self.mode = mode;
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Optimizer updates applied to this network so far.
    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub(crate) fn bump_train_steps(&mut self) {
        self.train_steps += 1;
    }

    pub(crate) fn set_train_steps(&mut self, steps: u64) {
        self.train_steps = steps;
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for (l, lin) in self.linears.iter().enumerate() {
            n += lin.w.len() + lin.b.len();
            if self.bn_enabled && l < 3 {
                n += 2 * self.widths[l + 1];
            }
        }
        n
    }

    /// Flatten all trainable parameters. Order: for each layer, weight
    /// (row-major, out x in) then bias, then gamma and beta for hidden layers
    /// with batch norm. Running statistics are not parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (l, lin) in self.linears.iter().enumerate() {
            out.extend(lin.w.iter());
            out.extend(lin.b.iter());
            if self.bn_enabled && l < 3 {
                out.extend(self.norms[l].gamma.iter());
                out.extend(self.norms[l].beta.iter());
            }
        }
        out
    }

    /// Overwrite all trainable parameters from a flat vector (same order as
    /// `flat_params`). Invalidates any cached forward state.
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(invalid_input(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &params[at..at + n];
            at += n;
            s
        };
        for l in 0..self.linears.len() {
            let (rows, cols) = self.linears[l].w.dim();
            let ws = take(rows * cols);
            for (dst, src) in self.linears[l].w.iter_mut().zip(ws) {
                *dst = *src;
            }
            let bs = take(rows);
            for (dst, src) in self.linears[l].b.iter_mut().zip(bs) {
                *dst = *src;
            }
            if self.bn_enabled && l < 3 {
                let gs = take(rows);
                for (dst, src) in self.norms[l].gamma.iter_mut().zip(gs) {
                    *dst = *src;
                }
                let bts = take(rows);
                for (dst, src) in self.norms[l].beta.iter_mut().zip(bts) {
                    *dst = *src;
                }
            }
        }
        self.cache = None;
        Ok(())
    }

    fn batch_from_flat(&self, atoms: &[f64]) -> Result<Array2<f64>> {
        let d = self.dim();
        if atoms.is_empty() || atoms.len() % d != 0 {
            return Err(invalid_input(format!(
                "atom buffer length {} is not a positive multiple of input dim {}",
                atoms.len(),
                d
            )));
        }
        let m = atoms.len() / d;
        Ok(Array2::from_shape_vec((m, d), atoms.to_vec()).expect("shape checked"))
    }

    /// Forward pass over a flat row-major atom batch, honoring the mode flag.
    /// Training mode caches activations for `backward` and updates running
    /// statistics; it requires a batch of at least 2 when batch norm is on.
    pub fn forward(&mut self, atoms: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            NetMode::Train => self.forward_cached(atoms, true),
            NetMode::Infer => {
                self.cache = None;
                self.infer(atoms)
            }
        }
    }

    /// Inference forward: deterministic, batch-size independent, no state
    /// change. Each atom's height depends only on that atom.
    pub fn infer(&self, atoms: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.batch_from_flat(atoms)?;
        for l in 0..3 {
            let mut z = x.dot(&self.linears[l].w.t());
            z += &self.linears[l].b;
            if self.bn_enabled {
                let bn = &self.norms[l];
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                z -= &bn.running_mean;
                z *= &inv_std;
                z *= &bn.gamma;
                z += &bn.beta;
            }
            z.mapv_inplace(|v| v.max(0.0));
            x = z;
        }
        let mut out = x.dot(&self.linears[3].w.t());
        out += &self.linears[3].b;
        Ok(out.column(0).to_vec())
    }

    /// Forward pass that caches activations for `backward`, used by the
    /// training loop. `batch_stats` selects whether batch norm normalizes by
    /// batch statistics (also updating the running estimates) or by the
    /// frozen running statistics; gradients flow through either choice.
    pub fn forward_cached(&mut self, atoms: &[f64], batch_stats: bool) -> Result<Vec<f64>> {
        let x0 = self.batch_from_flat(atoms)?;
        let m = x0.nrows();
        if self.bn_enabled && batch_stats && m < 2 {
            return Err(invalid_input(
                "training-mode forward needs a batch of at least 2 when batch norm is active",
            ));
        }
        let mut layers = Vec::with_capacity(4);
        let mut x = x0;
        for l in 0..3 {
            let input = x.clone();
            let mut z = x.dot(&self.linears[l].w.t());
            z += &self.linears[l].b;
            let (mut y, x_hat, inv_std) = if self.bn_enabled {
                let (mu, var) = if batch_stats {
                    let mu = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let var = (&z - &mu)
                        .mapv(|v| v * v)
                        .mean_axis(Axis(0))
                        .expect("non-empty batch");
                    let bn = &mut self.norms[l];
                    bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + &(&mu * BN_MOMENTUM);
                    bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + &(&var * BN_MOMENTUM);
                    (mu, var)
                } else {
                    let bn = &self.norms[l];
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                let mut x_hat = z;
                x_hat -= &mu;
                x_hat *= &inv_std;
                let bn = &self.norms[l];
                let mut y = x_hat.clone();
                y *= &bn.gamma;
                y += &bn.beta;
                (y, Some(x_hat), Some(inv_std))
            } else {
                (z, None, None)
            };
            y.mapv_inplace(|v| v.max(0.0));
            layers.push(LayerCache {
                input,
                x_hat,
                inv_std,
                batch_stats: self.bn_enabled && batch_stats,
                activated: Some(y.clone()),
            });
            x = y;
        }
        let input = x.clone();
        let mut out = x.dot(&self.linears[3].w.t());
        out += &self.linears[3].b;
        layers.push(LayerCache {
            input,
            x_hat: None,
            inv_std: None,
            batch_stats: false,
            activated: None,
        });
        self.cache = Some(ForwardCache { layers, batch_len: m });
        Ok(out.column(0).to_vec())
    }

    /// Backward pass through the cached training forward. `dl_dh` holds one
    /// output gradient per atom of the cached batch; the return value is the
    /// flat parameter gradient (same layout as `flat_params`). Atoms are
    /// data, so no input gradient is produced.
    pub fn backward(&self, dl_dh: &[f64]) -> Result<Vec<f64>> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::InvalidState("backward called without a cached training forward".into())
        })?;
        if dl_dh.len() != cache.batch_len {
            return Err(invalid_input(format!(
                "output gradient has {} entries for a cached batch of {}",
                dl_dh.len(),
                cache.batch_len
            )));
        }
        let m = cache.batch_len;

        // Per-layer gradient blocks, assembled into flat order at the end.
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); 4];
        let mut bn_grads: Vec<(Array1<f64>, Array1<f64>)> = Vec::new();

        // Final linear.
        let delta = Array2::from_shape_vec((m, 1), dl_dh.to_vec()).expect("len checked");
        let top = &cache.layers[3];
        let dw = delta.t().dot(&top.input);
        let db = delta.sum_axis(Axis(0));
        grads[3] = dw.iter().chain(db.iter()).copied().collect();
        let mut d_x = delta.dot(&self.linears[3].w); // (m, h3)

        for l in (0..3).rev() {
            let layer = &cache.layers[l];
            let activated = layer.activated.as_ref().expect("hidden layer cache");
            // ReLU: gradient flows where the activation was positive.
            let mut d_y = d_x;
            d_y.zip_mut_with(activated, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });

            let d_z = if self.bn_enabled {
                let x_hat = layer.x_hat.as_ref().expect("bn cache");
                let inv_std = layer.inv_std.as_ref().expect("bn cache");
                let bn = &self.norms[l];
                let d_gamma = (&d_y * x_hat).sum_axis(Axis(0));
                let d_beta = d_y.sum_axis(Axis(0));
                let mut d_xhat = d_y;
                d_xhat *= &bn.gamma;
                let d_z = if layer.batch_stats {
                    // Batch statistics couple the batch:
                    // dz_i = istd * (dxh_i - mean(dxh) - xh_i * mean(dxh .* xh))
                    let mean_dxhat = d_xhat.mean_axis(Axis(0)).expect("non-empty");
                    let mean_dxhat_xhat =
                        (&d_xhat * x_hat).mean_axis(Axis(0)).expect("non-empty");
                    let mut d_z = d_xhat;
                    d_z -= &mean_dxhat;
                    d_z -= &(x_hat * &mean_dxhat_xhat);
                    d_z *= inv_std;
                    d_z
                } else {
                    let mut d_z = d_xhat;
                    d_z *= inv_std;
                    d_z
                };
                bn_grads.push((d_gamma, d_beta));
                d_z
            } else {
                d_y
            };

            let dw = d_z.t().dot(&layer.input);
            let db = d_z.sum_axis(Axis(0));
            grads[l] = dw.iter().chain(db.iter()).copied().collect();
            d_x = d_z.dot(&self.linears[l].w);
        }
        bn_grads.reverse(); // collected top-down, layout wants bottom-up

        let mut flat = Vec::with_capacity(self.param_count());
        for l in 0..4 {
            flat.extend_from_slice(&grads[l]);
            if self.bn_enabled && l < 3 {
                let (dg, dbta) = &bn_grads[l];
                flat.extend(dg.iter());
                flat.extend(dbta.iter());
            }
        }
        Ok(flat)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    // Checkpoint plumbing.
    pub(crate) fn bn_running_stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.norms
            .iter()
            .map(|bn| (bn.running_mean.to_vec(), bn.running_var.to_vec()))
            .collect()
    }

    pub(crate) fn set_bn_running_stats(&mut self, stats: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
        if stats.len() != self.norms.len() {
            return Err(invalid_input("running-stat layer count mismatch"));
        }
        for (bn, (mean, var)) in self.norms.iter_mut().zip(stats) {
            if mean.len() != bn.running_mean.len() || var.len() != bn.running_var.len() {
                return Err(invalid_input("running-stat width mismatch"));
            }
            if var.iter().any(|v| *v <= 0.0) {
                return Err(invalid_input("running variance entries must be > 0"));
            }
            bn.running_mean = Array1::from_vec(mean.clone());
            bn.running_var = Array1::from_vec(var.clone());
        }
        Ok(())
    }

    #[cfg(test)]
    fn cached_x_hat(&self, layer: usize) -> Option<&Array2<f64>> {
        self.cache.as_ref()?.layers[layer].x_hat.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_atoms(rows: &[[f64; 2]]) -> Vec<f64> {
        rows.iter().flatten().copied().collect()
    }

    fn small_net(seed: u64) -> HeightNet {
        HeightNet::new(2, [8, 8, 8], true, seed).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_heights() {
        let mut net = small_net(0);
        let zeros = vec![0.0; net.param_count()];
        let mut params = zeros.clone();
        // gamma = 1, beta = 0, everything else 0.
        let mut at = 0;
        for l in 0..4 {
            let (rows, cols) = (net.widths()[l + 1], net.widths()[l]);
            at += rows * cols + rows;
            if l < 3 {
                for g in 0..rows {
                    params[at + g] = 1.0;
                }
                at += 2 * rows;
            }
        }
        net.set_flat_params(&params).unwrap();
        net.set_mode(NetMode::Infer);
        let h = net.infer(&flat_atoms(&[[0.3, -0.7], [2.0, 5.0]])).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        drop(zeros);
    }

    #[test]
    fn training_forward_caches_distinct_preactivations() {
        let mut net = small_net(3);
        let atoms = flat_atoms(&[[0.1, 0.2], [0.9, -0.4]]);
        net.forward(&atoms).unwrap();
        let x_hat = net.cached_x_hat(0).unwrap();
        assert_ne!(x_hat.row(0), x_hat.row(1));
    }

    #[test]
    fn inference_is_batch_size_independent() {
        let mut net = small_net(7);
        // Push some running statistics away from the init values first.
        net.forward(&flat_atoms(&[[0.5, 0.1], [-0.3, 0.9], [1.5, -2.0]])).unwrap();
        net.set_mode(NetMode::Infer);
        let a = [0.25, -1.5];
        let b = [2.0, 0.75];
        let joint = net.infer(&flat_atoms(&[a, b])).unwrap();
        let solo_a = net.infer(&a).unwrap();
        let solo_b = net.infer(&b).unwrap();
        assert_eq!(joint[0].to_bits(), solo_a[0].to_bits());
        assert_eq!(joint[1].to_bits(), solo_b[0].to_bits());
    }

    #[test]
    fn training_batch_of_one_is_rejected() {
        let mut net = small_net(1);
        assert!(matches!(net.forward(&[0.5, 0.5]), Err(Error::InvalidInput(_))));
        // Without batch norm a batch of one is fine.
        let mut plain = HeightNet::new(2, [8, 8, 8], false, 1).unwrap();
        assert!(plain.forward(&[0.5, 0.5]).is_ok());
    }

    #[test]
    fn backward_without_cache_is_invalid_state() {
        let net = small_net(5);
        assert!(matches!(net.backward(&[1.0]), Err(Error::InvalidState(_))));
    }

    #[test]
    fn set_params_invalidates_cache() {
        let mut net = small_net(5);
        net.forward(&flat_atoms(&[[0.0, 0.1], [0.2, 0.3]])).unwrap();
        assert!(net.has_cache());
        let p = net.flat_params();
        net.set_flat_params(&p).unwrap();
        assert!(!net.has_cache());
        assert!(net.backward(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let mut net = small_net(11);
        net.forward(&flat_atoms(&[[0.4, 0.1], [-0.2, 0.6], [0.0, -1.0]])).unwrap();
        let g = net.backward(&[0.0, 0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let mut net = small_net(13);
        net.forward(&flat_atoms(&[[0.4, 0.1], [-0.2, 0.6], [1.0, 2.0], [0.3, 0.3]]))
            .unwrap();
        let dl = [0.7, -0.3, 0.05, 1.2];
        let g1 = net.backward(&dl).unwrap();
        let doubled: Vec<f64> = dl.iter().map(|v| 2.0 * v).collect();
        let g2 = net.backward(&doubled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!((2.0 * a).to_bits(), b.to_bits());
        }
    }

    #[test]
    fn normalized_preactivations_have_unit_statistics() {
        let mut net = HeightNet::new(2, [16, 16, 16], true, 17).unwrap();
        let mut atoms = Vec::new();
        let mut rng = seed_rng(99);
        for _ in 0..32 {
            atoms.push(rng.random_range(-2.0..2.0));
            atoms.push(rng.random_range(-2.0..2.0));
        }
        net.forward(&atoms).unwrap();
        for l in 0..3 {
            let x_hat = net.cached_x_hat(l).unwrap();
            for col in x_hat.columns() {
                let m = col.len() as f64;
                let mean = col.sum() / m;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                assert!(mean.abs() <= 1e-6, "feature mean {mean}");
                assert!((var - 1.0).abs() <= 1e-4, "feature var {var}");
            }
        }
    }

    /// Central finite differences against the analytic gradient on a random
    /// small net. The loss is sum_i g_i * H(y_i) with fixed g, evaluated in
    /// training mode on a fixed batch.
    #[test]
    fn backward_matches_finite_differences() {
        let mut net = small_net(21);
        let mut rng = seed_rng(4242);
        let batch: Vec<f64> = (0..32).map(|_| rng.random_range(-1.5..1.5)).collect();
        let dl: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();

        net.forward(&batch).unwrap();
        let analytic = net.backward(&dl).unwrap();

        let base = net.flat_params();
        let loss = |net: &mut HeightNet, params: &[f64]| -> f64 {
            net.set_flat_params(params).unwrap();
            let h = net.forward(&batch).unwrap();
            h.iter().zip(&dl).map(|(hi, gi)| hi * gi).sum()
        };

        let eps = 1e-5;
        let n_params = base.len();
        // Spot-check a deterministic spread of parameters across all layers.
        let step = (n_params / 97).max(1);
        let mut checked = 0;
        for idx in (0..n_params).step_by(step) {
            let mut p = base.clone();
            p[idx] = base[idx] + eps;
            let up = loss(&mut net, &p);
            p[idx] = base[idx] - eps;
            let down = loss(&mut net, &p);
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / denom <= 1e-4,
                "param {idx}: analytic {a} vs numeric {numeric}"
            );
            checked += 1;
        }
        assert!(checked >= 90);
    }

    #[test]
    fn finite_differences_without_batch_norm() {
        let mut net = HeightNet::new(2, [8, 8, 8], false, 23).unwrap();
        let mut rng = seed_rng(777);
        let batch: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dl: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.forward(&batch).unwrap();
        let analytic = net.backward(&dl).unwrap();
        let base = net.flat_params();
        let eps = 1e-5;
        for idx in (0..base.len()).step_by(7) {
            let mut p = base.clone();
            p[idx] += eps;
            net.set_flat_params(&p).unwrap();
            let up: f64 = net.forward(&batch).unwrap().iter().zip(&dl).map(|(h, g)| h * g).sum();
            p[idx] = base[idx] - eps;
            net.set_flat_params(&p).unwrap();
            let down: f64 = net.forward(&batch).unwrap().iter().zip(&dl).map(|(h, g)| h * g).sum();
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic[idx].abs().max(numeric.abs()).max(1e-6);
            assert!((analytic[idx] - numeric).abs() / denom <= 1e-4);
        }
    }

    #[test]
    fn flat_params_roundtrip() {
        let mut net = small_net(31);
        let p = net.flat_params();
        assert_eq!(p.len(), net.param_count());
        let mut q = p.clone();
        for v in q.iter_mut() {
            *v += 0.125;
        }
        net.set_flat_params(&q).unwrap();
        assert_eq!(net.flat_params(), q);
        assert!(net.set_flat_params(&q[1..]).is_err());
    }
}
