//! Training engine and diagnostics for the explicit regulariser induced by
//! Gaussian noise injections (GNIs) in fully-connected networks.
//!
//! The regulariser marginalises additive or multiplicative activation noise
//! into `R = 1/2 E_x sum_k sigma_k^2 Tr(J_k^T H_L J_k)`, where `J_k` is the
//! Jacobian of the outputs with respect to layer `k` and `H_L` the Hessian of
//! the loss with respect to the outputs. The crate trains networks with no
//! noise, with sampled noise, or with `R` added explicitly, and ships the
//! instruments used to compare them.

pub mod autodiff;
pub mod calibration;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod network;
pub mod noise;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
