//! Annealed latent diffusion posterior sampling inside an
//! expectation-maximization loop for blind inverse problems, with
//! half-quadratic-splitting kernel estimation, skip-gradient scheduling,
//! and a view-consistent extension for pose-free view synthesis.
//!
//! Learned components are replaced by analytic stand-ins — Gaussian and
//! Gaussian-mixture priors with closed-form diffused scores, a linear
//! codec, a projection denoiser — so every sampler claim is checkable
//! against exact oracles at desk scale. The [`oracle`] module ships those
//! reference implementations; they share no numerical machinery with the
//! paths they verify.

pub mod codec;
pub mod em;
pub mod error;
pub mod estep;
pub mod fft;
pub mod forward;
pub mod image;
pub mod metrics;
pub mod mstep;
pub mod multiview;
pub mod oracle;
pub mod prior;
pub mod rng;
pub mod sched;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

/// Latent states are plain dense vectors.
pub type LatentVector = nalgebra::DVector<f64>;
