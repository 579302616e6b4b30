//! Energy- and age-aware random access for energy-harvesting IoT networks.
//!
//! - [`model`]: network constants and the per-slot energy/age updates
//! - [`policy`]: transmit decisions (no policy, threshold only, the weighted
//!   threshold policy with constant/linear/elliptical probabilities, and the
//!   age-threshold baseline)
//! - [`sim`]: slot-synchronous collision-channel Monte Carlo simulator
//! - [`dtmc`]: energy and age Markov chains, stationary solves, analytical AAoI
//! - [`optimizer`]: exhaustive parameter search with common random numbers

pub mod dtmc;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use model::{DeviceState, SystemParams};
pub use policy::{AdraEnergyGate, PolicyConfig, ProbFunction};
pub use sim::{run_simulation, SimConfig, SimResult};
