//! 16-bit PGM images with a window sidecar, and raw little-endian sinograms
//! behind a one-line JSON header.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CtImage, Sinogram};
use crate::error::{Error, Result};

const MAXVAL: f64 = 65535.0;

fn format_err(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        reason: reason.into(),
    }
}

/// Intensity range mapped onto 0..=65535.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub const UNIT: Window = Window { min: 0.0, max: 1.0 };

    /// Tight window around the image values.
    pub fn fit(img: &CtImage) -> Window {
        let min = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            Window { min, max }
        } else {
            Window { min, max: min + 1.0 }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && self.max > self.min {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad window [{}, {}]", self.min, self.max)))
        }
    }
}

pub fn encode_pgm(img: &CtImage, window: Window) -> Result<Vec<u8>> {
    window.validate()?;
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    let span = window.max - window.min;
    for p in img.pixels() {
        let q = ((p - window.min) / span * MAXVAL).round().clamp(0.0, MAXVAL) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(format_err("PGM header", "unexpected end of file"));
        }
        match byte[0] {
            b'#' if token.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            c if c.is_ascii_whitespace() => {
                if !token.is_empty() {
                    break;
                }
            }
            c => token.push(c),
        }
    }
    String::from_utf8(token).map_err(|_| format_err("PGM header", "non-ASCII token"))
}

pub fn decode_pgm(bytes: &[u8], window: Window, pixel_size: f64) -> Result<CtImage> {
    window.validate()?;
    let mut r = BufReader::new(bytes);
    if header_token(&mut r)? != "P5" {
        return Err(format_err("PGM header", "expected magic P5"));
    }
    let mut num = |name: &str| -> Result<usize> {
        let t = header_token(&mut r)?;
        t.parse()
            .map_err(|_| format_err("PGM header", format!("bad {name} {t:?}")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 65535 {
        return Err(format_err("PGM header", format!("expected maxval 65535, got {maxval}")));
    }
    let mut raw = vec![0u8; width * height * 2];
    r.read_exact(&mut raw)
        .map_err(|_| format_err("PGM raster", "truncated pixel data"))?;
    let span = window.max - window.min;
    let pixels = raw
        .chunks_exact(2)
        .map(|b| window.min + f64::from(u16::from_be_bytes([b[0], b[1]])) / MAXVAL * span)
        .collect();
    CtImage::new(height, width, pixels, pixel_size)
}

/// Sidecar path for a PGM file: `name.pgm` → `name.window`.
pub fn window_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("window")
}

/// Text of the `.window` sidecar for an image written with `window`.
pub fn encode_window_sidecar(img: &CtImage, window: Window) -> String {
    format!(
        "window_min {:e}\nwindow_max {:e}\npixel_size {:e}\n",
        window.min,
        window.max,
        img.pixel_size()
    )
}

pub fn write_pgm(path: &Path, img: &CtImage, window: Window) -> Result<()> {
    fs::write(path, encode_pgm(img, window)?)?;
    fs::write(window_path(path), encode_window_sidecar(img, window))?;
    Ok(())
}

/// Reads a PGM and its sidecar; a missing sidecar means the unit window and
/// unit pixel size.
pub fn read_pgm(path: &Path) -> Result<CtImage> {
    let bytes = fs::read(path)?;
    let (mut window, mut pixel_size) = (Window::UNIT, 1.0);
    if let Ok(text) = fs::read_to_string(window_path(path)) {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| format_err("window sidecar", format!("bad line {line:?}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| format_err("window sidecar", format!("bad number in {line:?}")))?;
            match key {
                "window_min" => window.min = v,
                "window_max" => window.max = v,
                "pixel_size" => pixel_size = v,
                _ => return Err(format_err("window sidecar", format!("unknown key {key:?}"))),
            }
        }
    }
    decode_pgm(&bytes, window, pixel_size)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SinoHeader {
    views: usize,
    detectors: usize,
    angle_start: f64,
    angle_end: f64,
    detector_spacing: f64,
    field_of_view: f64,
}

pub fn encode_sinogram(sino: &Sinogram) -> Result<Vec<u8>> {
    let [angle_start, angle_end] = sino.angle_range_deg();
    let header = SinoHeader {
        views: sino.views(),
        detectors: sino.detectors(),
        angle_start,
        angle_end,
        detector_spacing: sino.detector_spacing(),
        field_of_view: sino.field_of_view(),
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| format_err("sinogram header", e.to_string()))?;
    out.push(b'\n');
    out.reserve(sino.values().len() * 8);
    for v in sino.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_sinogram(bytes: &[u8]) -> Result<Sinogram> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| format_err("sinogram header", "missing header line"))?;
    let header: SinoHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| format_err("sinogram header", e.to_string()))?;
    let body = &bytes[nl + 1..];
    let expected = header.views * header.detectors * 8;
    if body.len() != expected {
        return Err(format_err(
            "sinogram body",
            format!("expected {expected} bytes, found {}", body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Sinogram::new(
        header.views,
        header.detectors,
        [header.angle_start, header.angle_end],
        header.detector_spacing,
        header.field_of_view,
        values,
    )
}

pub fn write_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_sinogram(sino)?)?;
    Ok(())
}

pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    decode_sinogram(&fs::read(path)?)
}
