//! Simulation and analytic convergence certificates for a linear plant in
//! feedback with a backlash described by a strongly convex compact set.
//!
//! The closed loop is
//!
//! ```text
//!   ẋ = Ax + Bw + Ez,   y = Cx,   ż = P_{N_{y+Θ}(z)}(ẏ),
//! ```
//!
//! a play/backlash nonlinearity: `z` stays inside the translated set `y + Θ`
//! and moves only when pushed by its boundary. For T-periodic inputs `w`
//! this crate computes:
//!
//! - time-domain trajectories by a catching-up scheme (plant step, then
//!   metric projection onto the translated set) — [`sweeping_sim`];
//! - the sets of T-stationary backlash initial conditions and tubular
//!   localizations of the nonlinear trajectories around the linearized
//!   ones — [`localization`];
//! - path-length and velocity bounds for the backlash output and an upper
//!   bound θ on the Lyapunov exponent governing convergence to the forced
//!   periodic regime — [`rate_analysis`].
//!
//! Geometry (support functions, projections, normal cones, strong-convexity
//! constants) lives in [`convex_sets`]; dense kernels (matrix exponential,
//! the Ψ propagator, Lyapunov solves) in [`matrix_core`]; the forced and
//! periodic responses of the linearized loop in [`linear_subsystem`].
//!
//! Every major capability has a runnable demo under `examples/`; the
//! `backlash` binary drives JSON scenario files (see [`scenario`] and
//! [`cli`]).

pub mod convex_sets;
pub mod error;
pub mod linear_subsystem;
pub mod localization;
pub mod matrix_core;
pub mod quadrature;
pub mod rate_analysis;
pub mod sweeping_sim;

pub mod cli;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
