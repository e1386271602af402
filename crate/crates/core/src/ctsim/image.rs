use crate::error::{Error, Result};

/// Row-major H×W grid; row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct CtImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    pixel_size: f64,
}

impl CtImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, pixel_size: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "image pixels",
                expected: height * width,
                got: pixels.len(),
            });
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(Error::invalid(format!("pixel size must be positive, got {pixel_size}")));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("image pixel {i}"),
                step: 0,
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
            pixel_size,
        })
    }

    pub fn zeros(height: usize, width: usize, pixel_size: f64) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width], pixel_size)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &CtImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Physical width of the grid.
    pub fn field_of_view(&self) -> f64 {
        self.width as f64 * self.pixel_size
    }

    /// Pixels whose centres lie inside the inscribed circle.
    pub fn fov_mask(&self) -> Vec<bool> {
        let radius = self.height.min(self.width) as f64 / 2.0;
        let (cy, cx) = ((self.height as f64 - 1.0) / 2.0, (self.width as f64 - 1.0) / 2.0);
        let mut mask = Vec::with_capacity(self.pixels.len());
        for r in 0..self.height {
            for c in 0..self.width {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                mask.push(dx * dx + dy * dy <= radius * radius);
            }
        }
        mask
    }

    /// Bilinear sample at centred pixel coordinates (x right, y up);
    /// zero outside the grid.
    pub(crate) fn sample(&self, x: f64, y: f64) -> f64 {
        let col = x + (self.width as f64 - 1.0) / 2.0;
        let row = (self.height as f64 - 1.0) / 2.0 - y;
        let (c0, r0) = (col.floor(), row.floor());
        let (fc, fr) = (col - c0, row - r0);
        let (c0, r0) = (c0 as i64, r0 as i64);
        let at = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
                0.0
            } else {
                self.pixels[r as usize * self.width + c as usize]
            }
        };
        let top = at(r0, c0) * (1.0 - fc) + at(r0, c0 + 1) * fc;
        let bottom = at(r0 + 1, c0) * (1.0 - fc) + at(r0 + 1, c0 + 1) * fc;
        top * (1.0 - fr) + bottom * fr
    }

    /// Whole-pixel translation with zero fill; `dx` right, `dy` down.
    pub fn shifted(&self, dx: i64, dy: i64) -> CtImage {
        let mut out = vec![0.0; self.pixels.len()];
        for r in 0..self.height as i64 {
            for c in 0..self.width as i64 {
                let (sr, sc) = (r - dy, c - dx);
                if sr >= 0 && sc >= 0 && sr < self.height as i64 && sc < self.width as i64 {
                    out[(r as usize) * self.width + c as usize] =
                        self.pixels[sr as usize * self.width + sc as usize];
                }
            }
        }
        CtImage {
            pixels: out,
            ..self.clone()
        }
    }

    /// `a·self + b·other` on equal shapes.
    pub fn combine(&self, a: f64, other: &CtImage, b: f64) -> Result<CtImage> {
        if !self.same_shape(other) {
            return Err(Error::invalid("combine: image shapes differ"));
        }
        let pixels = self.pixels.iter().zip(&other.pixels).map(|(x, y)| a * x + b * y).collect();
        CtImage::new(self.height, self.width, pixels, self.pixel_size)
    }
}
