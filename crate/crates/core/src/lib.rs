//! Pontryagin switching functions for Lindblad dynamics.
//!
//! The crate computes the switching function (cost gradient) of a
//! single-control Lindblad problem two ways: deterministically from the
//! density matrix and its costate ([`lindblad`]), and stochastically from
//! quantum-jump trajectories whose costate partners share the same jump
//! record ([`trajectories`]). [`optimizer`] turns either into a projected,
//! TV-filtered gradient method.

pub mod algebra;
pub mod error;
pub mod lindblad;
pub mod optimizer;
pub mod problem;
pub mod trajectories;

pub use algebra::{Operator, StateVector};
pub use error::{Error, Result};
pub use problem::{ControlSchedule, ProblemSpec};
