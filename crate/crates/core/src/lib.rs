//! Continuous-parameter flow of measure-preserving transformations on
//! Ornstein-Uhlenbeck path space.
//!
//! The flow `S^u` is the Fourier multiplier `exp(-2iu·atan(2λ))`; at `u = 1`
//! it is the Ornstein-Uhlenbeck conjugate of the Jeulin-Yor transform and at
//! integer `u` it reproduces that transform's iterates. Two independent
//! realizations are provided:
//!
//! * [`flow`]: the spectral multiplier applied with an FFT;
//! * [`kernel`]: explicit convolution with the fractional kernel
//!   `cos(πu)·δ₀ + sin(πu)/π·pv(1/x) + Φ_u`.
//!
//! [`covariance`] evaluates the covariance of the induced two-parameter
//! Gaussian field, [`gaussian`] samples it, and [`ergodic`] runs Birkhoff
//! averages along translations and along the flow.

pub mod cli;
pub mod config;
pub mod covariance;
mod error;
pub mod ergodic;
pub mod flow;
pub mod gaussian;
pub mod kernel;
pub mod par;
pub mod paths;
pub mod quad;
pub mod specfun;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
pub use paths::{OuPath, TimeGrid, WienerPath};
