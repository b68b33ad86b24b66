//! Bidirectional predictive coding networks: energy, inference, learning and
//! evaluation, generic over `f32`/`f64`.

pub mod cli;
pub mod data;
pub mod energy;
pub mod eval;
mod error;
pub mod inference;
pub mod io;
pub mod learning;
pub mod network;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use energy::{EnergyBreakdown, EnergyConfig};
pub use inference::{ClampSpec, InitKind, LayerClamp, RelaxConfig};
pub use network::{ActivationKind, Direction, EdgeSpec, LayerSpec, ModelFamily, NetworkSpec};

/// Double-precision network.
pub type Network = network::Network<f64>;
/// Double-precision network state.
pub type NetworkState = inference::NetworkState<f64>;
