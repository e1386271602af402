use std::fmt;

use serde::{Deserialize, Serialize};

use super::{apply_photon_noise, default_detector_count, fbp_reconstruct, forward_project, CtImage, Sinogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolName {
    #[serde(rename = "LDCT")]
    Ldct,
    #[serde(rename = "SVCT")]
    Svct,
    #[serde(rename = "LACT")]
    Lact,
    #[serde(rename = "ideal")]
    Ideal,
}

impl ProtocolName {
    /// Lower-case tag used in file names.
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolName::Ldct => "ldct",
            ProtocolName::Svct => "svct",
            ProtocolName::Lact => "lact",
            ProtocolName::Ideal => "ideal",
        }
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Acquisition settings. `photon_count` is nominal for the ideal protocol,
/// which is always simulated noiselessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub name: ProtocolName,
    pub photon_count: f64,
    pub view_count: usize,
    pub angle_range_deg: [f64; 2],
}

impl ProtocolSpec {
    pub fn ldct() -> Self {
        Self {
            name: ProtocolName::Ldct,
            photon_count: 1.25e4,
            view_count: 512,
            angle_range_deg: [0.0, 360.0],
        }
    }

    pub fn svct() -> Self {
        Self {
            name: ProtocolName::Svct,
            photon_count: 1.25e8,
            view_count: 60,
            angle_range_deg: [0.0, 360.0],
        }
    }

    pub fn lact() -> Self {
        Self {
            name: ProtocolName::Lact,
            photon_count: 1.25e8,
            view_count: 512,
            angle_range_deg: [0.0, 125.0],
        }
    }

    pub fn ideal() -> Self {
        Self {
            name: ProtocolName::Ideal,
            photon_count: 1.25e8,
            view_count: 512,
            angle_range_deg: [0.0, 360.0],
        }
    }

    pub fn for_name(name: ProtocolName) -> Self {
        match name {
            ProtocolName::Ldct => Self::ldct(),
            ProtocolName::Svct => Self::svct(),
            ProtocolName::Lact => Self::lact(),
            ProtocolName::Ideal => Self::ideal(),
        }
    }

    pub fn with_views(mut self, views: usize) -> Self {
        self.view_count = views;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.photon_count > 0.0 && self.photon_count.is_finite()) {
            return Err(Error::invalid(format!(
                "{}: photon count must be positive, got {}",
                self.name, self.photon_count
            )));
        }
        if self.view_count == 0 {
            return Err(Error::invalid(format!("{}: view count must be at least 1", self.name)));
        }
        let [start, end] = self.angle_range_deg;
        if !(0.0 <= start && start < end && end <= 360.0) {
            return Err(Error::invalid(format!(
                "{}: angle range [{start}, {end}] must satisfy 0 <= start < end <= 360",
                self.name
            )));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.name == ProtocolName::Ideal
    }
}

/// Intermediate products of one protocol simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub sinogram: Sinogram,
    pub noisy: Option<Sinogram>,
    pub recon: CtImage,
}

pub fn simulate_protocol_full(img: &CtImage, spec: &ProtocolSpec, seed: u64) -> Result<Simulation> {
    let sinogram = forward_project(img, spec, default_detector_count(img.width()))?;
    let noisy = if spec.is_noiseless() {
        None
    } else {
        Some(apply_photon_noise(&sinogram, spec.photon_count, seed)?)
    };
    let recon = fbp_reconstruct(noisy.as_ref().unwrap_or(&sinogram), img.width())?;
    Ok(Simulation { sinogram, noisy, recon })
}

/// Projection, photon noise (skipped for the ideal protocol) and FBP at the
/// input resolution.
pub fn simulate_protocol(img: &CtImage, spec: &ProtocolSpec, seed: u64) -> Result<CtImage> {
    Ok(simulate_protocol_full(img, spec, seed)?.recon)
}
