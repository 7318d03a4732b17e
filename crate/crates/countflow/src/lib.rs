//! Count-space flow matching.
//!
//! Source and target count distributions are connected by a
//! continuous-time birth-death process with local unit jumps. Training is
//! simulation-free: a conditional binomial bridge pins each coupled
//! endpoint pair, its closed-form birth/death rates become regression
//! targets for a small rate network, and sampling runs the learned
//! process forward with a first-order local-jump discretization,
//! optionally with classifier-free guidance over condition labels.
//!
//! Modules:
//! - [`bridge`]: the conditional binomial bridge, its pmf and rates, and
//!   a jump-chain oracle.
//! - [`coupling`]: independent and exact minibatch-OT endpoint pairing
//!   under the symmetric Poisson cost.
//! - [`net`]: the birth-death rate network with built-in gradients and
//!   Adam.
//! - [`train`]: the rate-matching objective and the training loop.
//! - [`sampler`]: forward simulation with optional guidance.
//! - [`eval`]: exact-matching 2-Wasserstein, RBF MMD, conditional
//!   fidelity metrics and bridge-marginal heatmaps.
//! - [`sim`]: synthetic data generators.
//! - [`data`]: CSV formats shared with the command-line tool.

pub mod bridge;
pub mod coupling;
pub mod data;
pub mod error;
pub mod eval;
pub mod net;
pub mod rng;
pub mod sampler;
pub mod sim;
pub mod train;
mod types;

pub use error::{Error, Result};
pub use types::{
    BridgeSample, ConditionalRates, CountVector, CouplingKind, EndpointBatch, EndpointPair,
    EpsilonConfig, RateField, Trajectory,
};
