//! Lagrangian neural network (LNN) dynamics models at desk scale.
//!
//! The crate is organized around five subsystems:
//!
//! - [`diff`]: the exact-derivative engine. Multilayer perceptrons evaluated
//!   together with their input Jacobians, a scalar recording tape whose
//!   reverse pass differentiates through those Jacobians, and Adam.
//! - [`mechanics`]: analytic rigid-body ground truth (pendulum, double
//!   pendulum, cart-pole, planar torso). Exact mass matrix, Coriolis and
//!   gravity terms, forward dynamics, energy, and a semi-implicit integrator.
//! - [`models`]: the learned dynamics models. Forward-trained LNN, the
//!   eigendecomposition inference path, inverse-dynamics training, a reduced
//!   center-of-mass model, and a structure-agnostic baseline network.
//! - [`training`]: dataset generation from mechanics rollouts, the
//!   supervised losses for every model variant, and the training loops.
//! - [`planner`]: a sampling-based receding-horizon planner with discounted
//!   returns and an optional learned terminal value.
//!
//! Everything is `f64`; all stochastic procedures take explicit seeds and are
//! bit-reproducible across runs.

pub mod diff;
pub mod error;
pub mod mechanics;
pub mod models;
pub mod planner;
pub mod probes;
pub mod training;

pub use error::{CoreError, Result};
