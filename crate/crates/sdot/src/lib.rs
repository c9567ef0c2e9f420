//! Semi-discrete optimal transport with a learned height representation.
//!
//! The transport problem here moves a continuous source measure onto a
//! discrete set of target atoms. The Brenier potential is an upper envelope
//! of hyperplanes, one per atom, parametrized by a per-atom height; its
//! gradient is the transport map, which sends each source point to the atom
//! whose hyperplane wins at that point. Finding the optimal heights is a
//! convex problem whose gradient is simply "estimated cell mass minus target
//! mass", estimated by Monte Carlo.
//!
//! Two optimizers are provided: a direct Adam loop on the height vector
//! (the numerical oracle), and a training loop that learns the heights as a
//! neural function of the atom coordinates. The learned function is reusable:
//! heights for atoms added later come from a forward pass, with no further
//! optimization.
//!
//! On top of the solver sit synthetic mode-collapse benchmarks, an image
//! color-transfer pipeline and a point-cloud domain-adaptation pipeline,
//! all reachable from the `sdot` command-line binary.

pub mod adam;
pub mod checkpoint;
pub mod envelope;
pub mod error;
pub mod net;
pub mod quadrature;
pub mod rng;
pub mod solver;
pub mod source;
pub mod synth;
pub mod target;
pub mod volume;

pub mod adapt;
pub mod color;

pub use adam::{adam_step, AdamParams, AdamState};
pub use envelope::{assign_cells, eval_potential, map_points, transport_map};
pub use error::{Error, Result};
pub use net::{HeightNet, NetMode};
pub use solver::{
    optimize_heights_direct, predict_heights, reuse_error_report, train_height_net, Scheme,
    TrainConfig,
};
pub use source::SourceSpec;
pub use target::{DiscreteTarget, HeightVector};
pub use volume::{
    energy_gradient, estimate_volumes, estimate_volumes_batched, estimate_volumes_global,
    CellStats, VolumeConfig,
};
