//! Pre-emptive deferral from a fixed target policy to an expert policy in
//! finite-horizon, non-stationary tabular MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: time-indexed MDPs and policies, trajectory sampling, exact and
//!   Monte-Carlo policy evaluation.
//! - [`envs`]: built-in environments (an 8-state chain and a factored vitals
//!   surrogate), reference policies and the glucose/insulin discretizers.
//! - [`posterior`]: conjugate Dirichlet / Normal-Gamma posteriors over the
//!   non-stationary dynamics and posterior sampling of whole MDPs.
//! - [`deferral`]: the sequential deferral learner, its one-step and
//!   stationary variants, the augmented-MDP baseline and deployment.
//! - [`uncertainty`]: nested Monte-Carlo decomposition of the outcome
//!   variance at a deferral point, and the delayed-deferral heatmap.
//! - [`harness`]: configuration-driven experiment pipeline.

pub mod deferral;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod posterior;
pub mod seed;
pub mod stats;
pub mod uncertainty;

pub use error::{Error, Result};
pub use seed::Prng;

/// Tool version string recorded in emitted file headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
