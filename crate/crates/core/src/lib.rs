//! Model predictive control for cross-directional disturbance-rejection
//! plants such as synchrotron orbit feedback.
//!
//! The crate is split along the controller life cycle:
//!
//! - [`model`]: diagonal state-space realisation and its modal (SVD) basis.
//! - [`design`]: offline synthesis (Riccati terminal cost, modal weights,
//!   IMC gains, setpoint map, Kalman gain, iteration budget).
//! - [`qp`]: condensed QP data and the amplitude/slew-rate projections.
//! - [`fgm`]: the online fast gradient solver and its worker pool.
//! - [`observer`]: delay-augmented state and disturbance estimation.
//! - [`sim`]: closed-loop runs against the IMC baseline, scored by IBM.
//! - [`controller`]: the MPC stack assembled from the pieces above.
//! - [`io`], [`config`]: CSV matrices and run configuration.

pub mod config;
pub mod controller;
pub mod design;
pub mod error;
pub mod fgm;
pub mod io;
pub mod model;
pub mod observer;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
