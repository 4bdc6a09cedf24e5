//! Equivariant message-passing potential.
//!
//! Each directed edge carries an orthonormal frame built from the edge and
//! a local centroid. Neighbor vectors are projected into that frame, so the
//! per-edge message is invariant; vector features are rebuilt from the
//! frame axes. Invariant features additionally pass through a relative
//! rotary rotation, and a bilinear cross-layer residual feeds the readout.
//!
//! ```
//! use localframe::geom::AtomicSystem;
//! use localframe::model::{predict, ModelConfig, ModelState};
//!
//! let config = ModelConfig { hidden_channels: 16, num_heads: 4, num_basis: 8, ..Default::default() };
//! let state = ModelState::init(&config, 0).unwrap();
//! let water = AtomicSystem::molecule(
//!     vec![8, 1, 1],
//!     vec![[0.0, 0.0, 0.0], [0.96, 0.0, 0.0], [-0.24, 0.93, 0.0]],
//! ).unwrap();
//! let p = predict(&state, &water).unwrap();
//! let net: f64 = p.forces.iter().map(|f| f[0] + f[1] + f[2]).sum();
//! assert!(net.abs() < 1e-10);
//! ```

mod basis;
mod checkpoint;
mod config;
mod forward;
mod state;

pub use basis::{
    envelope, pair_head, rbf_centers, rbf_expand, rope_angles, rope_rotate, rope_theta,
    temporal_connect,
};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use forward::{energy, evaluate, predict, stress, Evaluation, Prediction, Request, Topology};
pub use state::{fit_energy_shifts, ModelState, ENERGY_SCALE, ENERGY_SHIFT, NUM_SPECIES};

use crate::diffcore::DiffError;
use crate::geom::GeomError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("distance {distance} Å outside (0, {cutoff}]")]
    DistanceOutOfRange { distance: f64, cutoff: f64 },
    #[error("stress requires a periodic system")]
    NotPeriodic,
    #[error("topology built for {topology} atoms, system has {atoms}")]
    TopologyMismatch { atoms: usize, topology: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
}
