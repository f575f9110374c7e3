//! Differentiable ultrasound B-mode simulation.
//!
//! The crate traces acoustic energy through a 2.5-D scene with full-path
//! Monte Carlo sampling, deposits element-wise pressure time series, forms
//! B-mode images through a delay-and-sum chain, and propagates image-space
//! gradients back to scene and acquisition parameters by replaying frozen
//! path realizations with dual numbers.

pub mod config;
pub mod gradcheck;
pub mod imaging;
pub mod io;
pub mod math;
pub mod objective;
pub mod optimize;
pub mod rng;
pub mod runner;
pub mod scene;
pub mod transducer;
pub mod transport;

pub use math::{Dual, Real, Vec3};
