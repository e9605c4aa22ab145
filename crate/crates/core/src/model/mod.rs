//! Bundled energy models.
//!
//! * [`LayeredTanhEnergyNet`] / [`BoundExample`]: the continuous layered network
//!   trained by equilibrium propagation, bound to one training example.
//! * [`FeedforwardBaseline`]: the same weights run as a feedforward net and
//!   trained by backpropagation.
//! * [`SpinGlass`]: enumerable ±1 models used as exact ground truth.
//! * [`TwoState`], [`LinearModel`], [`ConstantModel`], [`QuadraticModel`]:
//!   small closed-form test models.

mod feedforward;
mod layered;
mod simple;
mod spin_glass;

pub(crate) use feedforward::argmax;
pub use feedforward::FeedforwardBaseline;
pub use layered::{loss_for_example, BoundExample, LayeredTanhEnergyNet, SquaredErrorLoss};
pub use simple::{ConstantModel, LinearModel, QuadraticModel, TwoState};
pub use spin_glass::{SpinGlass, SpinLoss};

/// Uniform init in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
