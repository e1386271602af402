use rand::Rng as _;
use rand_distr::Poisson;
use rayon::prelude::*;

use super::Sinogram;
use crate::error::{Error, Result};
use crate::seed;

fn draw_count(rng: &mut seed::Rng, lambda: f64) -> f64 {
    // Poisson rejects a zero rate; an underflowed rate yields zero counts.
    match Poisson::new(lambda) {
        Ok(dist) => rng.sample(dist),
        Err(_) => 0.0,
    }
}

/// Replaces each line integral `p` by `ln(α / max(n, 1))` with
/// `n ~ Poisson(α·exp(−p))`. View `k` draws from its own counter stream.
pub fn apply_photon_noise(sino: &Sinogram, photon_count: f64, seed: u64) -> Result<Sinogram> {
    if !(photon_count > 0.0 && photon_count.is_finite()) {
        return Err(Error::invalid(format!("photon count must be positive, got {photon_count}")));
    }
    let d = sino.detectors();
    let mut values = sino.values().to_vec();
    values.par_chunks_mut(d).enumerate().for_each(|(view, row)| {
        let mut rng = seed::stream(seed, "ctsim.photon_noise", view as u64);
        for p in row.iter_mut() {
            let counts = draw_count(&mut rng, photon_count * (-*p).exp());
            *p = (photon_count / counts.max(1.0)).ln();
        }
    });
    sino.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(value: f64, views: usize, detectors: usize) -> Sinogram {
        Sinogram::new(views, detectors, [0.0, 360.0], 1.0, 1.0, vec![value; views * detectors]).unwrap()
    }

    #[test]
    fn zero_path_counts_have_poisson_mean() {
        let alpha = 1.25e4;
        let n = 100_000;
        let mut rng = seed::stream(3, "test", 0);
        let mean = (0..n).map(|_| draw_count(&mut rng, alpha)).sum::<f64>() / n as f64;
        assert!((mean - alpha).abs() <= 4.0 * (alpha / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn attenuated_counts_have_expected_mean() {
        let (alpha, p) = (1.25e4, 2.0);
        let n = 100_000;
        let lambda = alpha * f64::exp(-p);
        let mut rng = seed::stream(5, "test", 0);
        let mean = (0..n).map(|_| draw_count(&mut rng, lambda)).sum::<f64>() / n as f64;
        assert!((mean - lambda).abs() <= 4.0 * (lambda / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn huge_photon_count_is_nearly_noiseless() {
        let sino = flat(1.7, 8, 16);
        let noisy = apply_photon_noise(&sino, 1e12, 1).unwrap();
        let worst = noisy.values().iter().map(|v| (v - 1.7).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
    }

    #[test]
    fn deterministic_per_seed() {
        let sino = flat(0.5, 6, 10);
        let a = apply_photon_noise(&sino, 1e3, 9).unwrap();
        let b = apply_photon_noise(&sino, 1e3, 9).unwrap();
        let c = apply_photon_noise(&sino, 1e3, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn starved_rays_are_clamped() {
        let sino = flat(80.0, 1, 4);
        let noisy = apply_photon_noise(&sino, 100.0, 0).unwrap();
        assert!(noisy.values().iter().all(|v| (*v - 100f64.ln()).abs() < 1e-12));
        assert!(apply_photon_noise(&sino, 0.0, 0).is_err());
    }
}
