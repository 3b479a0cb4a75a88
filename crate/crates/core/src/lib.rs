//! Hitting-time analysis for absorbing finite Markov chains.
//!
//! The crate computes the quasi-stationary data of a chain (Perron root,
//! quasi-stationary measure, Doob-transformed local chain), the separation of
//! the local chain from equilibrium, the laws of minimal strong times with
//! respect to evolving measures and of the minimal conditionally strong
//! quasi-stationary time, and the exact decomposition of the survival tail
//! `P(tau_G > t)` into an exponential leading term and a residual. Every
//! quantity can be cross-checked through an auxiliary two-layer chain, either
//! exactly (forward propagation of its law) or by Monte Carlo.

pub mod chain;
pub mod error;
pub mod hitting;
pub mod matrix;
pub mod sim;
pub mod spectral;
pub mod strong_times;
pub mod suite;
pub mod zoo;

pub use chain::{
    evolve, is_primitive, parse_chain, parse_chain_document, AbsorbingChain, ChainDocument,
    Domain, EvolvingMeasure, Measure, ParseOptions,
};
pub use error::{ErrorClass, QstError, Result};
pub use matrix::DenseMatrix;
pub use spectral::{SeparationTable, SpectralData, SpectralOptions};
