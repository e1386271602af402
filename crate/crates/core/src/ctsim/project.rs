use rayon::prelude::*;

use super::{CtImage, ProtocolSpec};
use crate::error::{Error, Result};

/// Ray sampling step in pixels.
const RAY_STEP: f64 = 0.5;

/// Views × detectors line integrals for a parallel-beam scan.
///
/// View `k` sits at `angle_start + k·(angle_end − angle_start)/views`
/// degrees. Detector `j` is offset `(j − (D−1)/2)·detector_spacing` from the
/// rotation centre, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub(crate) views: usize,
    pub(crate) detectors: usize,
    pub(crate) angle_start_deg: f64,
    pub(crate) angle_end_deg: f64,
    pub(crate) detector_spacing: f64,
    pub(crate) field_of_view: f64,
    pub(crate) values: Vec<f64>,
}

impl Sinogram {
    pub fn new(
        views: usize,
        detectors: usize,
        angle_range_deg: [f64; 2],
        detector_spacing: f64,
        field_of_view: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if views == 0 || detectors == 0 {
            return Err(Error::invalid("sinogram needs at least one view and one detector"));
        }
        let [start, end] = angle_range_deg;
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::invalid(format!("bad angle range [{start}, {end}]")));
        }
        if !(detector_spacing > 0.0 && detector_spacing.is_finite()) {
            return Err(Error::invalid("detector spacing must be positive"));
        }
        if !(field_of_view > 0.0 && field_of_view.is_finite()) {
            return Err(Error::invalid("field of view must be positive"));
        }
        if values.len() != views * detectors {
            return Err(Error::DimensionMismatch {
                context: "sinogram values",
                expected: views * detectors,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("sinogram view {}, detector {}", i / detectors, i % detectors),
                step: 0,
            });
        }
        Ok(Self {
            views,
            detectors,
            angle_start_deg: start,
            angle_end_deg: end,
            detector_spacing,
            field_of_view,
            values,
        })
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn detectors(&self) -> usize {
        self.detectors
    }

    pub fn angle_range_deg(&self) -> [f64; 2] {
        [self.angle_start_deg, self.angle_end_deg]
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn field_of_view(&self) -> f64 {
        self.field_of_view
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, view: usize) -> &[f64] {
        &self.values[view * self.detectors..(view + 1) * self.detectors]
    }

    /// Per-view angles in radians.
    pub fn angles(&self) -> Vec<f64> {
        let step = (self.angle_end_deg - self.angle_start_deg) / self.views as f64;
        (0..self.views)
            .map(|k| (self.angle_start_deg + k as f64 * step).to_radians())
            .collect()
    }

    /// Physical offset of detector `j` from the rotation centre.
    pub fn detector_offset(&self, j: usize) -> f64 {
        (j as f64 - (self.detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Result<Sinogram> {
        Sinogram::new(
            self.views,
            self.detectors,
            self.angle_range_deg(),
            self.detector_spacing,
            self.field_of_view,
            values,
        )
    }
}

/// Detector count covering the image diagonal at one-pixel spacing.
pub fn default_detector_count(width: usize) -> usize {
    (std::f64::consts::SQRT_2 * width as f64).ceil() as usize
}

/// Line integrals by ray marching at half-pixel steps with bilinear sampling,
/// one detector per pixel width.
pub fn forward_project(img: &CtImage, spec: &ProtocolSpec, detectors: usize) -> Result<Sinogram> {
    spec.validate()?;
    if img.height() != img.width() {
        return Err(Error::invalid("forward projection needs a square image"));
    }
    let n = img.width();
    if detectors < default_detector_count(n) {
        return Err(Error::invalid(format!(
            "{detectors} detectors do not cover the {n}-pixel image diagonal"
        )));
    }
    let mut sino = Sinogram::new(
        spec.view_count,
        detectors,
        spec.angle_range_deg,
        img.pixel_size(),
        img.field_of_view(),
        vec![0.0; spec.view_count * detectors],
    )?;
    let angles = sino.angles();
    let reach = (n as f64) * std::f64::consts::SQRT_2 / 2.0 + 1.0;
    let centre = (detectors as f64 - 1.0) / 2.0;
    let scale = RAY_STEP * img.pixel_size();

    sino.values
        .par_chunks_mut(detectors)
        .zip(angles.par_iter())
        .for_each(|(row, &theta)| {
            let (sn, cs) = theta.sin_cos();
            for (j, out) in row.iter_mut().enumerate() {
                let s = j as f64 - centre;
                if s.abs() >= reach {
                    continue;
                }
                let half = (reach * reach - s * s).sqrt();
                let k_max = (half / RAY_STEP).ceil() as i64;
                let mut acc = 0.0;
                for k in -k_max..=k_max {
                    let l = k as f64 * RAY_STEP;
                    acc += img.sample(s * cs - l * sn, s * sn + l * cs);
                }
                *out = acc * scale;
            }
        });
    Ok(sino)
}
