//! Viscoelastic beam simulation with memory kernels, adjoint gradients, and
//! kernel calibration.

pub mod adjoint;
pub mod calibration;
pub mod commands;
pub mod config;
pub mod error;
pub mod fem;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod modal;
pub mod optim;
pub mod rational;
pub mod solver;

pub use error::{Error, Result};
