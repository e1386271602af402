//! Image-quality and entropy summary metrics.

use rand::Rng as _;

use crate::ctsim::CtImage;
use crate::error::{Error, Result};
use crate::sampler::SampleBatch;
use crate::seed;

/// Serialized stand-in for the infinite PSNR of identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &CtImage, b: &CtImage) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )))
    }
}

fn check_mask(img: &CtImage, roi: &[bool]) -> Result<usize> {
    if roi.len() != img.pixels().len() {
        return Err(Error::DimensionMismatch {
            context: "roi mask",
            expected: img.pixels().len(),
            got: roi.len(),
        });
    }
    match roi.iter().filter(|m| **m).count() {
        0 => Err(Error::invalid("roi is empty")),
        n => Ok(n),
    }
}

fn db(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR in dB; `+∞` for identical images.
pub fn psnr(a: &CtImage, b: &CtImage, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.pixels().len() as f64;
    let mse = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    Ok(db(peak, mse))
}

/// PSNR restricted to the pixels selected by `roi`.
pub fn psnr_masked(a: &CtImage, b: &CtImage, peak: f64, roi: &[bool]) -> Result<f64> {
    check_shapes(a, b)?;
    let n = check_mask(a, roi)? as f64;
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(roi)
        .filter(|(_, m)| **m)
        .map(|((x, y), _)| (x - y).powi(2))
        .sum();
    Ok(db(peak, sse / n))
}

/// Clamps an infinite PSNR to [`PSNR_CAP_DB`] for output files.
pub fn psnr_for_output(value: f64) -> f64 {
    value.min(PSNR_CAP_DB)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian filter over valid windows only.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

fn ssim_index(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Mean SSIM over all valid 11×11 Gaussian (σ = 1.5) windows, peak 1.
pub fn ssim(a: &CtImage, b: &CtImage) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let (pa, pb) = (a.pixels(), b.pixels());
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
    let mu_a = filter_valid(pa, h, w, &taps);
    let mu_b = filter_valid(pb, h, w, &taps);
    let e_aa = filter_valid(&prod(pa, pa), h, w, &taps);
    let e_bb = filter_valid(&prod(pb, pb), h, w, &taps);
    let e_ab = filter_valid(&prod(pa, pb), h, w, &taps);
    let n = mu_a.len();
    let total: f64 = (0..n).map(|i| ssim_index(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i])).sum();
    Ok(total / n as f64)
}

/// Population standard deviation of `recon − reference` over `roi`.
pub fn noise_sd(recon: &CtImage, reference: &CtImage, roi: &[bool]) -> Result<f64> {
    check_shapes(recon, reference)?;
    let n = check_mask(recon, roi)? as f64;
    let diffs = || {
        recon
            .pixels()
            .iter()
            .zip(reference.pixels())
            .zip(roi)
            .filter(|(_, m)| **m)
            .map(|((x, y), _)| x - y)
    };
    let mean = diffs().sum::<f64>() / n;
    Ok((diffs().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub noise_sd: f64,
    pub n_pixels: usize,
}

/// PSNR and NoiseSD over `roi`, SSIM over the whole grid.
pub fn evaluate(recon: &CtImage, reference: &CtImage, roi: &[bool]) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr_masked(recon, reference, 1.0, roi)?,
        ssim: ssim(recon, reference)?,
        noise_sd: noise_sd(recon, reference, roi)?,
        n_pixels: check_mask(recon, roi)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// 10th, 20th, ..., 90th percentiles (linear interpolation).
    pub deciles: [f64; 9],
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn entropy_stats(values: &[f64]) -> Result<EntropyStats> {
    if values.is_empty() {
        return Err(Error::invalid("entropy statistics of an empty batch"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut deciles = [0.0; 9];
    for (k, d) in deciles.iter_mut().enumerate() {
        *d = quantile_sorted(&sorted, (k + 1) as f64 / 10.0);
    }
    Ok(EntropyStats {
        count: values.len(),
        mean,
        std,
        deciles,
    })
}

pub fn batch_entropy_stats(batch: &SampleBatch) -> Result<EntropyStats> {
    let values = batch
        .entropies()
        .ok_or_else(|| Error::invalid(format!("{} batch has no entropies", batch.stage())))?;
    entropy_stats(values)
}

/// Percentile bootstrap interval for the mean at confidence `level`.
pub fn bootstrap_mean_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::invalid("bootstrap needs data and at least one resample"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must be in (0, 1), got {level}")));
    }
    let mut rng = seed::stream(seed, "metrics.bootstrap", 0);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> CtImage {
        let px = (0..h * w).map(|i| f(i / w, i % w)).collect();
        CtImage::new(h, w, px, 1.0).unwrap()
    }

    /// Direct 2-D window loop, no separability.
    fn ssim_reference(a: &CtImage, b: &CtImage) -> f64 {
        let taps = gaussian_taps();
        let (h, w) = (a.height(), a.width());
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=h - SSIM_WINDOW {
            for c in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = taps[i] * taps[j];
                        let (x, y) = (a.get(r + i, c + j), b.get(r + i, c + j));
                        ma += wt * x;
                        mb += wt * y;
                        aa += wt * x * x;
                        bb += wt * y * y;
                        ab += wt * x * y;
                    }
                }
                total += ssim_index(ma, mb, aa, bb, ab);
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_cases() {
        let a = img(4, 4, |_, _| 0.3);
        let b = img(4, 4, |_, _| 0.4);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(psnr_for_output(f64::INFINITY), 99.0);
        let c = img(4, 4, |r, _| if r < 2 { 0.3 + 0.1 * 2f64.sqrt() } else { 0.3 });
        assert!((psnr(&a, &c, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &img(4, 5, |_, _| 0.0), 1.0).is_err());
    }

    #[test]
    fn ssim_cases() {
        let a = img(16, 16, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);

        let flat = img(16, 16, |_, _| 0.2);
        let lifted = img(16, 16, |_, _| 0.7);
        let s = ssim(&flat, &lifted).unwrap();
        assert!(s < 1.0);
        assert!((s - ssim_reference(&flat, &lifted)).abs() <= 1e-10);

        let pattern = img(16, 16, |r, c| if (r + c) % 2 == 0 { 0.6 } else { 0.4 });
        let anti = img(16, 16, |r, c| if (r + c) % 2 == 0 { 0.4 } else { 0.6 });
        assert!(ssim(&pattern, &anti).unwrap() < 0.0);
        assert!(ssim(&img(8, 8, |_, _| 0.0), &img(8, 8, |_, _| 0.0)).is_err());
    }

    #[test]
    fn ssim_matches_reference_on_random_images() {
        let mut rng = seed::stream(1, "test", 0);
        let a = img(20, 23, |_, _| rng.random::<f64>());
        let mut rng = seed::stream(1, "test", 1);
        let b = img(20, 23, |_, _| rng.random::<f64>());
        assert!((ssim(&a, &b).unwrap() - ssim_reference(&a, &b)).abs() <= 1e-10);
    }

    #[test]
    fn noise_sd_cases() {
        let a = img(4, 4, |_, _| 0.5);
        let roi = vec![true; 16];
        assert_eq!(noise_sd(&a, &a, &roi).unwrap(), 0.0);
        let alt = img(4, 4, |r, c| if (r + c) % 2 == 0 { 0.53 } else { 0.47 });
        assert!((noise_sd(&alt, &a, &roi).unwrap() - 0.03).abs() < 1e-12);
        assert!(noise_sd(&a, &a, &[false; 16]).is_err());
    }

    #[test]
    fn entropy_stats_cases() {
        let s = entropy_stats(&[0.4; 5]).unwrap();
        assert_eq!(s.std, 0.0);
        let ln2 = 2f64.ln();
        let s = entropy_stats(&[0.0, ln2, 0.0, ln2]).unwrap();
        assert!((s.mean - ln2 / 2.0).abs() < 1e-15);
        let s = entropy_stats(&(0..=10).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!(s.deciles, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert!(entropy_stats(&[]).is_err());
    }

    #[test]
    fn bootstrap_interval_brackets_mean() {
        let values: Vec<f64> = (0..200).map(|i| (i % 17) as f64 * 0.1).collect();
        let mean = values.iter().sum::<f64>() / 200.0;
        let (lo, hi) = bootstrap_mean_ci(&values, 0.99, 2000, 3).unwrap();
        assert!(lo < mean && mean < hi);
        assert_eq!(bootstrap_mean_ci(&values, 0.99, 2000, 3).unwrap(), (lo, hi));
        assert_eq!(bootstrap_mean_ci(&[2.0; 10], 0.99, 100, 0).unwrap(), (2.0, 2.0));
    }

    proptest! {
        #[test]
        fn psnr_is_symmetric(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let mut ra = seed::stream(seed_a, "p", 0);
            let mut rb = seed::stream(seed_b, "p", 1);
            let a = img(6, 6, |_, _| ra.random::<f64>());
            let b = img(6, 6, |_, _| rb.random::<f64>());
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        }

        #[test]
        fn ssim_self_is_one(seed_a in 0u64..1000) {
            let mut r = seed::stream(seed_a, "p", 2);
            let a = img(12, 14, |_, _| r.random::<f64>());
            prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn noise_sd_shift_invariant(seed_a in 0u64..1000, shift in -2.0f64..2.0) {
            let mut r = seed::stream(seed_a, "p", 3);
            let a = img(5, 5, |_, _| r.random::<f64>());
            let b = img(5, 5, |_, _| r.random::<f64>());
            let roi = vec![true; 25];
            let base = noise_sd(&a, &b, &roi).unwrap();
            let a2 = img(5, 5, |i, j| a.get(i, j) + shift);
            let b2 = img(5, 5, |i, j| b.get(i, j) + shift);
            prop_assert!((noise_sd(&a2, &b2, &roi).unwrap() - base).abs() < 1e-12);
        }
    }
}
