//! Randomized variance-reduced proximal gradient methods built from unbiased
//! stochastic operators.
//!
//! The crate is organized as:
//!
//! * [`problem`]: composite objectives, gradients, proximity operators,
//!   smoothness/strong-convexity constants and an exact reference solver.
//! * [`ops`]: stochastic operator ensembles (sampling, skipping, rand-k,
//!   compositions) with their gain algebra and validators.
//! * [`algo`]: the generic template iteration and the direct implementations
//!   of its specializations.
//! * [`theory`]: stepsize rules, linear rates and Lyapunov functions as
//!   checkable certificates.
//! * [`distsim`]: an in-process master/worker simulation with a
//!   communication ledger.
//! * [`harness`]: configuration, synthetic problem generation, multi-seed
//!   experiments and CSV/report output.

pub mod algo;
pub mod distsim;
pub mod error;
pub mod harness;
pub mod ops;
pub mod problem;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
