use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{CtImage, Sinogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RampWindow {
    #[default]
    None,
    Hann,
}

/// Frequency response of the band-limited spatial Ram-Lak kernel
/// (1/4 at 0, −1/(π²n²) at odd n) on an `n`-point zero-padded grid.
fn ramp_response(detectors: usize, n: usize, window: RampWindow) -> Vec<Complex<f64>> {
    let mut kernel = vec![Complex::new(0.0, 0.0); n];
    kernel[0].re = 0.25;
    for k in (1..detectors).step_by(2) {
        let v = -1.0 / (PI * PI * (k * k) as f64);
        kernel[k].re = v;
        kernel[n - k].re = v;
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut kernel);
    if window == RampWindow::Hann {
        for (m, h) in kernel.iter_mut().enumerate() {
            let f = m.min(n - m) as f64 / n as f64;
            *h *= 0.5 * (1.0 + (2.0 * PI * f).cos());
        }
    }
    kernel
}

/// Ramp-filtered projections, one row per view.
fn filter_views(sino: &Sinogram, window: RampWindow) -> Vec<f64> {
    let d = sino.detectors();
    let n = (2 * d).next_power_of_two();
    let response = ramp_response(d, n, window);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let scale = 1.0 / (n as f64 * sino.detector_spacing());

    let mut out = vec![0.0; sino.values().len()];
    out.par_chunks_mut(d).enumerate().for_each(|(view, row)| {
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (b, p) in buf.iter_mut().zip(sino.row(view)) {
            b.re = *p;
        }
        fwd.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&response) {
            *b *= h;
        }
        inv.process(&mut buf);
        for (o, b) in row.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    });
    out
}

/// Angular quadrature weight: π/V for a full turn, range/V otherwise.
fn angular_weight(sino: &Sinogram) -> f64 {
    let [start, end] = sino.angle_range_deg();
    let span = end - start;
    if span >= 360.0 - 1e-9 {
        PI / sino.views() as f64
    } else {
        span.to_radians() / sino.views() as f64
    }
}

pub fn fbp_reconstruct(sino: &Sinogram, out_size: usize) -> Result<CtImage> {
    fbp_reconstruct_with(sino, out_size, RampWindow::None)
}

/// Filtered backprojection onto an `out_size`² grid spanning the sinogram's
/// field of view, with linear interpolation between detectors.
pub fn fbp_reconstruct_with(sino: &Sinogram, out_size: usize, window: RampWindow) -> Result<CtImage> {
    if out_size == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    if sino.views() < 2 {
        return Err(Error::invalid("backprojection needs at least two views"));
    }
    let d = sino.detectors();
    let filtered = filter_views(sino, window);
    let trig: Vec<(f64, f64)> = sino.angles().iter().map(|a| a.sin_cos()).collect();
    let weight = angular_weight(sino);
    let pixel = sino.field_of_view() / out_size as f64;
    let half = (out_size as f64 - 1.0) / 2.0;
    let centre = (d as f64 - 1.0) / 2.0;
    let spacing = sino.detector_spacing();

    let mut pixels = vec![0.0; out_size * out_size];
    pixels.par_chunks_mut(out_size).enumerate().for_each(|(r, row)| {
        let y = (half - r as f64) * pixel;
        for (c, out) in row.iter_mut().enumerate() {
            let x = (c as f64 - half) * pixel;
            let mut acc = 0.0;
            for (view, (sn, cs)) in trig.iter().enumerate() {
                let u = (x * cs + y * sn) / spacing + centre;
                let j0 = u.floor();
                let f = u - j0;
                let j0 = j0 as i64;
                if j0 < 0 || j0 + 1 >= d as i64 {
                    continue;
                }
                let base = view * d + j0 as usize;
                acc += filtered[base] * (1.0 - f) + filtered[base + 1] * f;
            }
            *out = acc * weight;
        }
    });
    CtImage::new(out_size, out_size, pixels, pixel)
}
