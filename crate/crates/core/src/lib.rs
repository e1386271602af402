//! Numerical core of the uncertainty-guided manifold smoothing toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: variance schedules and forward-process arithmetic.
//! - [`oracle`]: a closed-form Gaussian-mixture world with exact scores,
//!   class posteriors and entropy gradients.
//! - [`sampler`]: DDIM sampling and inversion with classifier and
//!   uncertainty (entropy) guidance, plus the three-stage generation recipe.
//! - [`toynet`]: small MLP denoiser/classifier with manual backprop and the
//!   generator primitives (confidence concatenation, attention, fusion).
//! - [`ctsim`]: parallel-beam projection, photon noise and FBP.
//! - [`metrics`]: PSNR, SSIM, NoiseSD and entropy statistics.

pub mod ctsim;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod sampler;
pub mod schedule;
pub mod seed;
pub mod toynet;

pub use error::{Error, Result};
