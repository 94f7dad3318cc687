//! Minimal dense linear algebra, deterministic random streams, and the
//! finite-difference gradient oracle used throughout the crate.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use matrix::Matrix;
pub use rng::RngStream;
