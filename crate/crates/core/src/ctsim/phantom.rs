use serde::{Deserialize, Serialize};

use super::{CtImage, DEFAULT_FIELD_OF_VIEW};
use crate::error::{Error, Result};

const SUBSAMPLES: usize = 4;

/// Analytic phantoms in normalized coordinates: the field of view spans
/// [-1, 1] on both axes, y pointing up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomKind {
    Disk { center: [f64; 2], radius: f64, value: f64 },
    SheppLogan,
    Checker { tiles: usize },
}

impl PhantomKind {
    pub fn default_disk() -> Self {
        PhantomKind::Disk {
            center: [0.0, 0.0],
            radius: 0.8,
            value: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::Disk { .. } => "disk",
            PhantomKind::SheppLogan => "shepp_logan",
            PhantomKind::Checker { .. } => "checker",
        }
    }
}

// Modified Shepp-Logan: (value, a, b, x0, y0, phi in degrees).
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

fn shepp_logan_at(x: f64, y: f64) -> f64 {
    SHEPP_LOGAN
        .iter()
        .filter(|(_, a, b, x0, y0, phi)| {
            let (s, c) = phi.to_radians().sin_cos();
            let (dx, dy) = (x - x0, y - y0);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
        .map(|e| e.0)
        .sum()
}

fn checker_at(x: f64, y: f64, tiles: usize) -> f64 {
    if x * x + y * y > 0.81 {
        return 0.0;
    }
    let t = tiles as f64;
    let i = ((x + 1.0) / 2.0 * t).floor() as i64;
    let j = ((y + 1.0) / 2.0 * t).floor() as i64;
    if (i + j).rem_euclid(2) == 0 {
        1.0
    } else {
        0.25
    }
}

/// Rasterizes `kind` on a `size`×`size` grid with 4×4 subpixel averaging.
/// Shepp-Logan is rescaled so its maximum is exactly 1.
pub fn make_phantom(kind: &PhantomKind, size: usize) -> Result<CtImage> {
    if size < 32 {
        return Err(Error::invalid(format!("phantom size must be at least 32, got {size}")));
    }
    let eval: Box<dyn Fn(f64, f64) -> f64> = match *kind {
        PhantomKind::Disk { center, radius, value } => {
            if !(radius >= 0.0 && radius.is_finite() && value.is_finite()) {
                return Err(Error::invalid("disk radius must be finite and non-negative"));
            }
            Box::new(move |x, y| {
                let (dx, dy) = (x - center[0], y - center[1]);
                if dx * dx + dy * dy < radius * radius {
                    value
                } else {
                    0.0
                }
            })
        }
        PhantomKind::SheppLogan => Box::new(shepp_logan_at),
        PhantomKind::Checker { tiles } => {
            if tiles == 0 {
                return Err(Error::invalid("checker needs at least one tile"));
            }
            Box::new(move |x, y| checker_at(x, y, tiles))
        }
    };

    let n = size as f64;
    let sub = SUBSAMPLES as f64;
    let mut pixels = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let mut acc = 0.0;
            for si in 0..SUBSAMPLES {
                for sj in 0..SUBSAMPLES {
                    let x = (col as f64 + (sj as f64 + 0.5) / sub) / n * 2.0 - 1.0;
                    let y = 1.0 - (row as f64 + (si as f64 + 0.5) / sub) / n * 2.0;
                    acc += eval(x, y);
                }
            }
            pixels.push(acc / (sub * sub));
        }
    }
    if matches!(kind, PhantomKind::SheppLogan) {
        let max = pixels.iter().cloned().fold(f64::MIN, f64::max);
        pixels.iter_mut().for_each(|p| *p = (*p / max).max(0.0));
    }
    CtImage::new(size, size, pixels, DEFAULT_FIELD_OF_VIEW / n)
}
