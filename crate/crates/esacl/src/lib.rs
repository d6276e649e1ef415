//! Continual-learning toolkit built around three ideas:
//!
//! - sharpness-aware gradient estimation (perturb toward the local worst case,
//!   then take the descent gradient there),
//! - projection-free constrained optimization over a K-sparse polytope via a
//!   stochastic Frank-Wolfe update with accumulated momentum,
//! - a per-task lifecycle of one-shot magnitude pruning, freezing the
//!   survivors, and reinitializing the rest for the next task.
//!
//! Training cost is further reduced by loss-ranked data selection: the inner
//! (ascent) step sees only the highest-loss support examples, and the outer
//! (descent) step drops low-loss examples whose gradients contribute little.
//!
//! Everything is `f64`, single-threaded, and fully seeded: identical inputs
//! produce bit-identical outputs, byte-identical reports, and exact
//! checkpoint round-trips.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod runner;
pub mod sam;
pub mod seed;
pub mod select;
pub mod sfw;

pub use error::{Error, Result};
pub use mask::BitMask;
pub use nn::{Activation, Batch, NetworkSpec, ParamVector};
pub use runner::{Checkpoint, MaskState, RunOutput, RunStatus, TrainConfig};
pub use sfw::{KSparsePolytope, MomentumState};

/// Robust `ceil(frac * n)` for fractions given in decimal notation.
///
/// Guards against float dust such as `0.2 * 20 = 4.000000000000001` turning
/// an exact product into `ceil = 5`. Results are clamped to `0..=n`.
pub fn ceil_frac(frac: f64, n: usize) -> usize {
    let raw = frac * n as f64;
    let k = (raw - 1e-9).ceil();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}
