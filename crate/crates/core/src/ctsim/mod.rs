//! Parallel-beam CT: phantoms, forward projection, photon noise and FBP.
//!
//! Geometry is expressed in physical length units in which a normalized
//! intensity of 1 is one inverse attenuation length. Phantoms cover a square
//! field of view of [`DEFAULT_FIELD_OF_VIEW`] lengths, so line integrals
//! through the default disk stay in the 0..4 range.

mod fbp;
mod image;
pub mod io;
mod noise;
mod phantom;
mod project;
mod protocol;

pub use fbp::{fbp_reconstruct, fbp_reconstruct_with, RampWindow};
pub use image::CtImage;
pub use noise::apply_photon_noise;
pub use phantom::{make_phantom, PhantomKind};
pub use project::{default_detector_count, forward_project, Sinogram};
pub use protocol::{simulate_protocol, simulate_protocol_full, ProtocolName, ProtocolSpec, Simulation};

/// Width of the square phantom field of view in attenuation lengths.
pub const DEFAULT_FIELD_OF_VIEW: f64 = 5.0;
