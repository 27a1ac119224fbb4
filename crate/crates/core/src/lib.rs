//! Particle Gibbs with ancestor sampling, extended with particle rejuvenation
//! for state-space models whose transitions are degenerate or can only be
//! simulated.
//!
//! The crate is organised bottom-up: [`smc`] holds the particle substrate,
//! [`bridge`] the linear-Gaussian bridging machinery, [`models`] the model
//! zoo, [`kernels`] the Markov kernels (PG, PGAS, rejuvenated PGAS, PIMH),
//! [`abc`] the kernel-approximated ancestor step for simulator-only models and
//! [`diagnostics`] the chain summaries.

pub mod abc;
pub mod bridge;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod path;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
pub use path::{Path, Trajectory};
pub use rng::RandomSource;
