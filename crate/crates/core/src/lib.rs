//! Push-block particle dynamics on interlacing integer arrays with
//! site-dependent jump rates, together with the exact solvable-model
//! machinery describing them: one-particle spectral transition densities,
//! Karlin-McGregor and two-level determinantal semigroups, Gibbs measures on
//! arrays, and the space-level correlation kernel. Simulation and exact
//! computation are kept independent so each can check the other.

pub mod birth_chain;
pub mod cli;
pub mod dynamics;
pub mod interlacing;
pub mod kernel;
pub mod linalg;
pub mod rate_field;
pub mod semigroups;
pub mod spectral;
pub mod stats;

pub use rate_field::RateField;
