//! Feedback-based online optimization of dynamical systems whose state or
//! cost functions are only accessible through trained neural networks.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: fixed-step RK4 integration and Euclidean projections.
//! - [`plants`]: LTI, SIS epidemic and stabilized unicycle plants, plus
//!   disturbance signals.
//! - [`objective`]: costs, composite gradients and the time-varying
//!   optimizer oracle.
//! - [`controller`]: the projected gradient-flow controller in its four
//!   feedback modes and the closed-loop simulator.
//! - [`perception`]: feedforward/residual networks, generative maps,
//!   training and cover checks.
//! - [`surrogate`]: centered-difference gradients over cost surrogates.
//! - [`certification`]: Lyapunov constants, gain ceiling, ISS envelope and
//!   gradient-error budgets.

pub mod certification;
pub mod controller;
pub mod error;
pub mod linalg;
pub mod numerics;
pub mod objective;
pub mod perception;
pub mod plants;
pub mod surrogate;

pub use error::{Error, Result};

/// Dense column vector used for states, inputs and disturbances.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for Jacobians and plant matrices.
pub type Matrix = nalgebra::DMatrix<f64>;
