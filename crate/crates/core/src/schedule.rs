//! Variance schedules and forward-process arithmetic.
//!
//! Steps are 1-based: `t = 1..=T` index noisy latents and `t = 0` is clean
//! data, so `alpha_bar(0) == 1`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Offset used by the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clamp applied to cosine-schedule betas.
pub const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Serializable description of a schedule. `alpha_bar` values are always
/// recomputed from it, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.kind, self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[0] = 1` for clean data, then one entry per step.
    alpha_bars: Vec<f64>,
}

/// Drift and diffusion coefficients of the variance-preserving SDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeCoefficients {
    /// Coefficient of `x` in the drift term, per unit step.
    pub drift_scale: f64,
    /// Noise-injection rate `g`.
    pub diffusion: f64,
}

pub fn make_schedule(
    kind: ScheduleKind,
    steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!("schedule needs T >= 2, got {steps}")));
    }
    if !beta_min.is_finite() || !beta_max.is_finite() {
        return Err(Error::invalid("schedule bounds must be finite"));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "schedule bounds must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let betas = match kind {
        ScheduleKind::Linear => {
            let span = beta_max - beta_min;
            (0..steps)
                .map(|i| beta_min + span * i as f64 / (steps - 1) as f64)
                .collect()
        }
        ScheduleKind::Cosine => cosine_betas(steps),
    };
    let spec = ScheduleSpec {
        kind,
        steps,
        beta_min,
        beta_max,
    };
    Ok(NoiseSchedule::from_betas(spec, betas))
}

fn cosine_betas(steps: usize) -> Vec<f64> {
    let f = |t: f64| {
        let arg = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
        arg.cos().powi(2)
    };
    let f0 = f(0.0);
    let target = |t: usize| f(t as f64) / f0;
    (1..=steps)
        .map(|t| {
            let beta = 1.0 - target(t) / target(t - 1);
            beta.clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA)
        })
        .collect()
}

impl NoiseSchedule {
    fn from_betas(spec: ScheduleSpec, betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Self {
            spec,
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn kind(&self) -> ScheduleKind {
        self.spec.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_bar` for `t = 0..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.betas[t - 1])
    }

    /// `alpha_t` for `1 <= t <= T`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alphas[t - 1])
    }

    /// Cumulative product up to `t`; defined for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| Error::invalid(format!("step {t} outside 0..={}", self.steps())))
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// Forward process: `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
    ///
    /// `t = 0` returns `x0` unchanged.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        check_dim("q_sample", x0.len(), eps.len())?;
        let ab = self.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Discrete-step SDE coefficients: `f = -beta_t / 2`, `g = sqrt(beta_t)`.
    pub fn sde_coefficients(&self, t: usize) -> Result<SdeCoefficients> {
        Ok(coefficients_for_beta(self.beta(t)?))
    }

    /// Coefficients at fractional time `tau` in `[1, T]`, using the linear
    /// interpolant of the betas.
    pub fn sde_coefficients_at(&self, tau: f64) -> Result<SdeCoefficients> {
        let t_max = self.steps() as f64;
        if !(1.0..=t_max).contains(&tau) {
            return Err(Error::invalid(format!("time {tau} outside [1, {t_max}]")));
        }
        let lo = tau.floor() as usize;
        let frac = tau - lo as f64;
        let beta = if lo == self.steps() {
            self.betas[lo - 1]
        } else {
            self.betas[lo - 1] * (1.0 - frac) + self.betas[lo] * frac
        };
        Ok(coefficients_for_beta(beta))
    }
}

fn coefficients_for_beta(beta: f64) -> SdeCoefficients {
    SdeCoefficients {
        drift_scale: -0.5 * beta,
        diffusion: beta.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_alpha_bar(betas: &[f64], t: usize) -> f64 {
        let mut p = 1.0;
        for b in &betas[..t] {
            p *= 1.0 - b;
        }
        p
    }

    #[test]
    fn linear_two_steps() {
        let s = make_schedule(ScheduleKind::Linear, 2, 0.1, 0.3).unwrap();
        assert_eq!(s.betas(), &[0.1, 0.3]);
        assert!((s.alpha_bar(1).unwrap() - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2).unwrap() - 0.63).abs() < 1e-15);
    }

    #[test]
    fn linear_thousand_steps_matches_extended_precision_product() {
        // Frozen from a 40-digit product of the 1000 factors.
        let expected = 4.035_829_765_375_683e-5;
        let s = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
        let got = s.alpha_bar(1000).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-11, "{got}");
        assert!((got - brute_alpha_bar(s.betas(), 1000)).abs() < 1e-18);
    }

    #[test]
    fn cosine_ten_steps_is_monotone_and_clamped() {
        let s = make_schedule(ScheduleKind::Cosine, 10, 1e-4, 0.02).unwrap();
        for &b in s.betas() {
            assert!(b > 0.0 && b <= COSINE_MAX_BETA);
        }
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(10).unwrap() > 0.0);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(make_schedule(ScheduleKind::Linear, 1, 0.1, 0.2).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 10, 0.0, 0.2).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 10, 0.3, 0.2).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 10, 0.1, 1.0).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 10, f64::NAN, 0.2).is_err());
        assert!(make_schedule(ScheduleKind::Cosine, 10, 0.1, f64::INFINITY).is_err());
    }

    #[test]
    fn q_sample_limits() {
        let s = make_schedule(ScheduleKind::Linear, 2, 0.64, 0.64).unwrap();
        let x0 = [1.5, -2.0];
        let eps = [0.3, 0.7];
        assert_eq!(s.q_sample(&x0, 0, &eps).unwrap(), x0.to_vec());
        let xt = s.q_sample(&[0.0, 0.0], 1, &eps).unwrap();
        assert!((xt[0] - 0.8 * 0.3).abs() < 1e-15);
        assert!((xt[1] - 0.8 * 0.7).abs() < 1e-15);
        assert!(s.q_sample(&x0, 1, &[0.0]).is_err());
        assert!(s.q_sample(&x0, 3, &eps).is_err());
    }

    #[test]
    fn q_sample_population_moments() {
        use rand_distr::{Distribution, StandardNormal};
        let s = make_schedule(ScheduleKind::Linear, 100, 1e-3, 0.05).unwrap();
        let t = 40;
        let ab = s.alpha_bar(t).unwrap();
        let x0 = [2.0, -1.0];
        let n = 100_000;
        let mut rng = crate::seed::stream(1, "q_sample_test", 0);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xt = s.q_sample(&x0, t, &eps).unwrap();
            for i in 0..2 {
                sum[i] += xt[i];
                sq[i] += xt[i] * xt[i];
            }
        }
        let var = 1.0 - ab;
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let sample_var = sq[i] / n as f64 - mean * mean;
            let se_mean = (var / n as f64).sqrt();
            let se_var = var * (2.0 / n as f64).sqrt();
            assert!((mean - ab.sqrt() * x0[i]).abs() < 3.0 * se_mean);
            assert!((sample_var - var).abs() < 3.0 * se_var);
        }
    }

    #[test]
    fn sde_coefficients_formula() {
        let s = make_schedule(ScheduleKind::Linear, 2, 0.04, 0.04).unwrap();
        let c = s.sde_coefficients(1).unwrap();
        assert!((c.drift_scale + 0.02).abs() < 1e-15);
        assert!((c.diffusion - 0.2).abs() < 1e-15);

        let s = make_schedule(ScheduleKind::Linear, 2, 1e-12, 1e-12).unwrap();
        let c = s.sde_coefficients(2).unwrap();
        assert!(c.drift_scale.abs() < 1e-11 && c.diffusion < 1e-5);

        let s = make_schedule(ScheduleKind::Linear, 11, 0.01, 0.11).unwrap();
        let c = s.sde_coefficients(6).unwrap();
        // beta_6 = 0.01 + 5 * 0.01
        assert!((c.drift_scale + 0.03).abs() < 1e-15);
        assert!((c.diffusion - 0.06f64.sqrt()).abs() < 1e-15);
        assert!(s.sde_coefficients(0).is_err());
        assert!(s.sde_coefficients(12).is_err());

        let mid = s.sde_coefficients_at(6.5).unwrap();
        assert!((mid.drift_scale + 0.5 * 0.065).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn schedule_invariants(
            steps in 2usize..400,
            lo in 1e-5f64..0.05,
            width in 0.0f64..0.3,
            cosine in any::<bool>(),
        ) {
            let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
            let s = make_schedule(kind, steps, lo, lo + width).unwrap();
            for t in 1..=steps {
                let b = s.beta(t).unwrap();
                prop_assert!(b > 0.0 && b < 1.0);
                prop_assert!(b <= COSINE_MAX_BETA || kind == ScheduleKind::Linear);
                prop_assert_eq!(s.alpha(t).unwrap(), 1.0 - b);
                let ratio = s.alpha_bar(t).unwrap() / s.alpha_bar(t - 1).unwrap();
                prop_assert!(((ratio - s.alpha(t).unwrap()) / s.alpha(t).unwrap()).abs() <= 1e-12);
                prop_assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
            }
            prop_assert!(s.alpha_bar(1).unwrap() <= s.alpha(1).unwrap());
            prop_assert!(s.alpha_bar(steps).unwrap() > 0.0);
        }

        #[test]
        fn reparameterization_consistency(
            x0 in proptest::collection::vec(-5.0f64..5.0, 3),
            eps in proptest::collection::vec(-3.0f64..3.0, 3),
            t in 1usize..=50,
        ) {
            let s = make_schedule(ScheduleKind::Linear, 50, 2e-3, 0.4).unwrap();
            let xt = s.q_sample(&x0, t, &eps).unwrap();
            let ab = s.alpha_bar(t).unwrap();
            for i in 0..3 {
                let rec = (xt[i] - ab.sqrt() * x0[i]) / (1.0 - ab).sqrt();
                let scale = eps[i].abs().max(1.0);
                prop_assert!((rec - eps[i]).abs() / scale <= 1e-12);
            }
        }
    }
}
