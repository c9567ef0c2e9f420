//! Height-network checkpoints: one JSON document holding the architecture,
//! flat parameters, batch-norm running statistics, optimizer state and the
//! root seed.
//!
//! Parameter order is the `HeightNet::flat_params` layout: for each layer,
//! weight (row-major, out x in) then bias, then gamma and beta for hidden
//! layers when batch norm is enabled. Loading and re-saving a checkpoint
//! reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamParams, AdamState};
use crate::error::{invalid_input, Error, Result};
use crate::net::{HeightNet, NetMode, BN_EPSILON, BN_MOMENTUM};

pub const CHECKPOINT_FORMAT: &str = "sdot-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamDoc {
    pub hyper: AdamParams,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// The on-disk checkpoint document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub format: String,
    pub dim: usize,
    pub widths: Vec<usize>,
    pub bn_enabled: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub params: Vec<f64>,
    pub bn_running: Vec<RunningStats>,
    pub adam: Option<AdamDoc>,
    pub seed: u64,
    pub train_steps: u64,
}

impl CheckpointDoc {
    pub fn from_net(net: &HeightNet, adam: Option<&AdamState>) -> Self {
        let bn_running = net
            .bn_running_stats()
            .into_iter()
            .map(|(mean, var)| RunningStats { mean, var })
            .collect();
        let adam = adam.map(|st| {
            let (step, m, v) = st.parts();
            AdamDoc { hyper: st.hyper, step, m: m.to_vec(), v: v.to_vec() }
        });
        CheckpointDoc {
            format: CHECKPOINT_FORMAT.to_string(),
            dim: net.dim(),
            widths: net.widths().to_vec(),
            bn_enabled: net.bn_enabled(),
            bn_momentum: BN_MOMENTUM,
            bn_epsilon: BN_EPSILON,
            params: net.flat_params(),
            bn_running,
            adam,
            seed: net.init_seed(),
            train_steps: net.train_steps(),
        }
    }

    /// Rebuild the network (in inference mode) and optimizer state.
    pub fn restore(&self) -> Result<(HeightNet, Option<AdamState>)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(invalid_input(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        if self.widths.len() != 5 || *self.widths.last().unwrap() != 1 || self.widths[0] != self.dim
        {
            return Err(invalid_input("checkpoint widths must be [d, h1, h2, h3, 1]"));
        }
        let hidden = [self.widths[1], self.widths[2], self.widths[3]];
        let mut net = HeightNet::new(self.dim, hidden, self.bn_enabled, self.seed)?;
        net.set_flat_params(&self.params)?;
        let stats: Vec<(Vec<f64>, Vec<f64>)> = self
            .bn_running
            .iter()
            .map(|rs| (rs.mean.clone(), rs.var.clone()))
            .collect();
        net.set_bn_running_stats(&stats)?;
        net.set_train_steps(self.train_steps);
        net.set_mode(NetMode::Infer);
        let adam = match &self.adam {
            Some(doc) => Some(AdamState::from_parts(doc.hyper, doc.step, doc.m.clone(), doc.v.clone())?),
            None => None,
        };
        Ok((net, adam))
    }
}

/// Serialize a checkpoint to its canonical byte form.
pub fn checkpoint_bytes(net: &HeightNet, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let doc = CheckpointDoc::from_net(net, adam);
    let mut bytes = serde_json::to_vec(&doc).map_err(|e| Error::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_checkpoint(
    net: &HeightNet,
    adam: Option<&AdamState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path.as_ref(), checkpoint_bytes(net, adam)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(HeightNet, Option<AdamState>)> {
    let bytes = std::fs::read(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let doc: CheckpointDoc =
        serde_json::from_slice(&bytes).map_err(|e| Error::Io(format!("bad checkpoint: {e}")))?;
    doc.restore()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::AdamParams;

    #[test]
    fn roundtrip_is_bit_identical() {
        let mut net = HeightNet::new(2, [8, 8, 8], true, 9).unwrap();
        // Leave some fingerprints: a training forward moves running stats.
        net.forward(&[0.1, 0.2, -0.5, 0.8, 1.0, -1.0]).unwrap();
        let adam = AdamState::new(net.param_count(), AdamParams::with_lr(0.02));

        let bytes = checkpoint_bytes(&net, Some(&adam)).unwrap();
        let doc: CheckpointDoc = serde_json::from_slice(&bytes).unwrap();
        let (net2, adam2) = doc.restore().unwrap();
        let bytes2 = checkpoint_bytes(&net2, adam2.as_ref()).unwrap();
        assert_eq!(bytes, bytes2);

        // And the restored net computes identical heights.
        let probe = [0.33, -0.7];
        let a = net.infer(&probe).unwrap();
        let b = net2.infer(&probe).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn restore_rejects_foreign_format() {
        let net = HeightNet::new(1, [4, 4, 4], false, 0).unwrap();
        let mut doc = CheckpointDoc::from_net(&net, None);
        doc.format = "something-else".into();
        assert!(doc.restore().is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let net = HeightNet::new(3, [4, 4, 4], true, 5).unwrap();
        save_checkpoint(&net, None, &path).unwrap();
        let (net2, adam2) = load_checkpoint(&path).unwrap();
        assert!(adam2.is_none());
        assert_eq!(net2.widths(), net.widths());
        assert_eq!(net2.mode(), NetMode::Infer);
        assert_eq!(net2.flat_params(), net.flat_params());
    }
}
