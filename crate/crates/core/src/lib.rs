//! Probabilistic Boolean Network simulation, analysis and control.
//!
//! - [`model`] / [`network`]: network definition, validation and dynamics
//! - [`analysis`]: transition matrix, attractors, steady-state distributions
//! - [`inference`]: learning a network from expression data
//! - [`env`]: the network as an episodic control problem
//! - [`neural`]: the Q-function approximator
//! - [`agent`]: Double DQN with prioritized replay
//! - [`eval`]: controller evaluation and training curves

pub mod agent;
pub mod analysis;
pub mod env;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod inference;
pub mod model;
pub mod network;
pub mod neural;
pub mod rng;
pub mod state;

pub use analysis::{AttractorSet, Controller, NullController, SimulationPlan, SsdHistogram, TransitionMatrix};
pub use error::PbnError;
pub use model::{BooleanFunction, NodeFunctions, NodeSpec, PbnModel, Violation};
pub use network::Network;
pub use state::NetworkState;
