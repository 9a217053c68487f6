//! Diffusion models with a time-independent auxiliary noise term.
//!
//! The forward chain diffuses data towards `N(xi, sigma0^2 I)` for a random
//! offset `xi`, and the balanced gamma schedule makes the injected noise and
//! the regression target coincide so training reduces to a DDPM-style loss.

pub mod data;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod process;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod verify;
pub mod xi_noise;

pub use error::{Error, Result};
