//! The auxiliary chain on `X x {0,1}` that turns a stopping rule into a
//! hitting time of the layer `X x {1}`.
//!
//! From `(y, 0)` the walker moves to `z` with probability `P(y, z)` and then
//! switches to layer 1 with probability `J(t, z)`; layer 1 just follows `P`.
//! [`run_exact`] propagates the law of this chain forward; [`sample_trajectories`]
//! samples it.

mod exact;
mod monte_carlo;

pub use exact::{augmented_step, exact_strong_time_tail, initial_law, run_exact, AugmentedLaw};
pub use monte_carlo::{
    sample_trajectories, wilson_interval, Band, SimConfig, SimResult, WILSON_Z99,
};

/// A state of the auxiliary chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentedState {
    pub base: usize,
    /// `false` before the stopping time fires, `true` after.
    pub stopped: bool,
}
