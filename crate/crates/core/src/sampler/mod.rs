//! Deterministic DDIM sampling, DDIM inversion and guided noise prediction.

mod backend;
mod batch;
mod ums;

pub use backend::{Conditioning, OracleBackend};
pub use batch::{write_trajectory_csv, SampleBatch, Stage};
pub use ums::{ums_generate, UmsOutput, UmsSettings};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::oracle::ZERO_PROB_CUTOFF;
use crate::schedule::NoiseSchedule;

/// Trajectories whose norm exceeds this abort the chain.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Relative step of the central finite differences used for classifiers
/// without input gradients.
pub const FD_RELATIVE_STEP: f64 = 1e-3;

/// A noise predictor `eps(x_t, y, t)`.
///
/// Implementations must be deterministic and return a vector of the same
/// length as `x_t`.
pub trait EpsilonModel: Sync {
    fn dim(&self) -> usize;

    fn predict(&self, x_t: &[f64], y: Option<usize>, t: usize) -> Result<Vec<f64>>;
}

/// A time-conditioned classifier `p(y | x_t, t)`.
pub trait PosteriorProvider: Sync {
    fn num_classes(&self) -> usize;

    fn probs(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>>;

    fn log_probs(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        Ok(self.probs(x_t, t)?.into_iter().map(f64::ln).collect())
    }

    /// `grad_x log p(y | x_t, t)`, when available in closed form.
    fn analytic_log_posterior_grad(
        &self,
        _x_t: &[f64],
        _y: usize,
        _t: usize,
    ) -> Option<Result<Vec<f64>>> {
        None
    }

    /// `grad_x U(x_t)`, when available in closed form.
    fn analytic_entropy_grad(&self, _x_t: &[f64], _t: usize) -> Option<Result<Vec<f64>>> {
        None
    }
}

impl<T: EpsilonModel + ?Sized> EpsilonModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict(&self, x_t: &[f64], y: Option<usize>, t: usize) -> Result<Vec<f64>> {
        (**self).predict(x_t, y, t)
    }
}

/// Shannon entropy in nats; probabilities below the cutoff contribute 0.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|p| **p >= ZERO_PROB_CUTOFF)
        .map(|p| -p * p.ln())
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    None,
    Classifier,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceSpec {
    pub mode: GuidanceMode,
    /// Classifier scale `s` or uncertainty scale `gamma`.
    pub scale: f64,
    pub gradient_source: GradientSource,
}

impl GuidanceSpec {
    pub const NONE: Self = Self {
        mode: GuidanceMode::None,
        scale: 0.0,
        gradient_source: GradientSource::Analytic,
    };

    pub fn classifier(scale: f64) -> Self {
        Self {
            mode: GuidanceMode::Classifier,
            scale,
            gradient_source: GradientSource::Analytic,
        }
    }

    pub fn uncertainty(scale: f64) -> Self {
        Self {
            mode: GuidanceMode::Uncertainty,
            scale,
            gradient_source: GradientSource::Analytic,
        }
    }

    pub fn with_source(mut self, source: GradientSource) -> Self {
        self.gradient_source = source;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.mode != GuidanceMode::None && !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("guidance scale must be >= 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Central-difference gradient of `f` with per-coordinate step
/// `FD_RELATIVE_STEP * max(1, |x_i|)`.
pub fn finite_difference_grad(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = FD_RELATIVE_STEP * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe)?;
            probe[i] = x[i] - h;
            let down = f(&probe)?;
            probe[i] = x[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Gradient used by the guidance term, according to `spec`.
pub fn guidance_gradient<C: PosteriorProvider + ?Sized>(
    classifier: &C,
    x_t: &[f64],
    y: usize,
    t: usize,
    spec: &GuidanceSpec,
) -> Result<Vec<f64>> {
    let no_analytic = || {
        Error::invalid("classifier exposes no analytic gradient; use finite_difference")
    };
    match (spec.mode, spec.gradient_source) {
        (GuidanceMode::None, _) => Ok(vec![0.0; x_t.len()]),
        (GuidanceMode::Classifier, GradientSource::Analytic) => classifier
            .analytic_log_posterior_grad(x_t, y, t)
            .ok_or_else(no_analytic)?,
        (GuidanceMode::Uncertainty, GradientSource::Analytic) => classifier
            .analytic_entropy_grad(x_t, t)
            .ok_or_else(no_analytic)?,
        (GuidanceMode::Classifier, GradientSource::FiniteDifference) => {
            if y >= classifier.num_classes() {
                return Err(Error::invalid(format!("class {y} out of range")));
            }
            finite_difference_grad(|p| Ok(classifier.log_probs(p, t)?[y]), x_t)
        }
        (GuidanceMode::Uncertainty, GradientSource::FiniteDifference) => {
            finite_difference_grad(|p| Ok(entropy(&classifier.probs(p, t)?)), x_t)
        }
    }
}

/// Guided noise prediction:
/// `eps_hat = eps(x_t, y, t) - sqrt(1 - ab_t) * scale * grad`, where `grad`
/// is `grad log p(y | x_t)` (classifier mode) or `grad U(x_t)` (uncertainty
/// mode).
pub fn guided_epsilon<M, C>(
    model: &M,
    classifier: &C,
    x_t: &[f64],
    y: usize,
    t: usize,
    sched: &NoiseSchedule,
    spec: &GuidanceSpec,
) -> Result<Vec<f64>>
where
    M: EpsilonModel + ?Sized,
    C: PosteriorProvider + ?Sized,
{
    spec.validate()?;
    check_dim("guided_epsilon", model.dim(), x_t.len())?;
    let eps = model.predict(x_t, Some(y), t)?;
    check_dim("model output", x_t.len(), eps.len())?;
    if spec.mode == GuidanceMode::None || spec.scale == 0.0 {
        return Ok(eps);
    }
    let grad = guidance_gradient(classifier, x_t, y, t, spec)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("{:?} guidance gradient at x_t = {x_t:?}", spec.mode),
            step: t,
        });
    }
    let k = (1.0 - sched.alpha_bar(t)?).sqrt() * spec.scale;
    Ok(eps.iter().zip(&grad).map(|(e, g)| e - k * g).collect())
}

/// Result of one reverse DDIM step.
#[derive(Debug, Clone, PartialEq)]
pub struct DdimStep {
    pub prev: Vec<f64>,
    /// `(x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)`
    pub pred_x0: Vec<f64>,
}

fn transfer(x: &[f64], eps: &[f64], ab_from: f64, ab_to: f64) -> (Vec<f64>, Vec<f64>) {
    let (sf, nf) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (st, nt) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let pred_x0: Vec<f64> = x.iter().zip(eps).map(|(x, e)| (x - nf * e) / sf).collect();
    let next = pred_x0.iter().zip(eps).map(|(p, e)| st * p + nt * e).collect();
    (next, pred_x0)
}

/// Deterministic (eta = 0) DDIM update from `t` to `t - 1`.
pub fn ddim_step(x_t: &[f64], eps_hat: &[f64], t: usize, sched: &NoiseSchedule) -> Result<DdimStep> {
    check_dim("ddim_step", x_t.len(), eps_hat.len())?;
    if t == 0 {
        return Err(Error::invalid("ddim_step needs t >= 1"));
    }
    let (prev, pred_x0) = transfer(x_t, eps_hat, sched.alpha_bar(t)?, sched.alpha_bar(t - 1)?);
    Ok(DdimStep { prev, pred_x0 })
}

/// Reversed DDIM update from `t` to `t + 1`, using the unguided
/// class-conditional prediction `eps(x_t, y, t)`.
pub fn ddim_invert_step<M: EpsilonModel + ?Sized>(
    x_t: &[f64],
    model: &M,
    y: Option<usize>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t >= sched.steps() {
        return Err(Error::invalid(format!("inversion needs t <= T - 1, got {t}")));
    }
    let eps = model.predict(x_t, y, t)?;
    check_dim("ddim_invert_step", x_t.len(), eps.len())?;
    Ok(transfer(x_t, &eps, sched.alpha_bar(t)?, sched.alpha_bar(t + 1)?).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Denoise from a higher step to a lower one.
    Generate,
    /// Invert from a lower step to a higher one; guidance is ignored.
    Invert,
}

/// States visited by a chain, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Step index of each state.
    pub steps: Vec<usize>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn start(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn end(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

fn check_state(x: &[f64], step: usize) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            context: "sampling trajectory".into(),
            step,
        });
    }
    if norm > DIVERGENCE_NORM {
        return Err(Error::Divergence { step, norm });
    }
    Ok(())
}

/// Runs a full chain from `t_from` to `t_to`.
///
/// `Generate` requires `t_from > t_to` and applies [`guided_epsilon`] then
/// [`ddim_step`] at each step; `Invert` requires `t_from < t_to` and applies
/// [`ddim_invert_step`].
#[allow(clippy::too_many_arguments)]
pub fn sample_chain<M, C>(
    model: &M,
    classifier: &C,
    sched: &NoiseSchedule,
    spec: &GuidanceSpec,
    y: usize,
    x_start: &[f64],
    direction: Direction,
    t_from: usize,
    t_to: usize,
) -> Result<Trajectory>
where
    M: EpsilonModel + ?Sized,
    C: PosteriorProvider + ?Sized,
{
    check_dim("sample_chain", model.dim(), x_start.len())?;
    if t_from.max(t_to) > sched.steps() {
        return Err(Error::invalid(format!(
            "chain range {t_from}..{t_to} exceeds T = {}",
            sched.steps()
        )));
    }
    let mut steps = vec![t_from];
    let mut states = vec![x_start.to_vec()];
    match direction {
        Direction::Generate => {
            if t_from <= t_to {
                return Err(Error::invalid("generation runs from high t to low t"));
            }
            for t in ((t_to + 1)..=t_from).rev() {
                let x = states.last().unwrap();
                let eps = guided_epsilon(model, classifier, x, y, t, sched, spec)?;
                let next = ddim_step(x, &eps, t, sched)?.prev;
                check_state(&next, t)?;
                states.push(next);
                steps.push(t - 1);
            }
        }
        Direction::Invert => {
            if t_from >= t_to {
                return Err(Error::invalid("inversion runs from low t to high t"));
            }
            for t in t_from..t_to {
                let next = ddim_invert_step(states.last().unwrap(), model, Some(y), t, sched)?;
                check_state(&next, t)?;
                states.push(next);
                steps.push(t + 1);
            }
        }
    }
    Ok(Trajectory { steps, states })
}

/// Runs one chain per start point over the full schedule and returns the
/// endpoints in order. Chains are independent and run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn run_chains<M, C>(
    model: &M,
    classifier: &C,
    sched: &NoiseSchedule,
    spec: &GuidanceSpec,
    labels: &[usize],
    starts: &[f64],
    direction: Direction,
) -> Result<Vec<f64>>
where
    M: EpsilonModel + ?Sized,
    C: PosteriorProvider + ?Sized,
{
    let d = model.dim();
    check_dim("run_chains starts", labels.len() * d, starts.len())?;
    let (from, to) = match direction {
        Direction::Generate => (sched.steps(), 0),
        Direction::Invert => (0, sched.steps()),
    };
    let ends = labels
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let x = &starts[i * d..(i + 1) * d];
            sample_chain(model, classifier, sched, spec, y, x, direction, from, to)
                .map(|traj| traj.end().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ends.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ComponentSpec, GaussianMixtureOracle};
    use crate::schedule::{make_schedule, ScheduleKind};

    fn sched() -> NoiseSchedule {
        make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap()
    }

    fn world() -> GaussianMixtureOracle {
        GaussianMixtureOracle::default_world()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let n: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        n / b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
    }

    #[test]
    fn zero_scale_is_bitwise_unguided() {
        let s = sched();
        let backend = OracleBackend::new(&world(), &s, Conditioning::Unconditional).unwrap();
        let x = [0.3, -1.2];
        let plain = guided_epsilon(&backend, &backend, &x, 1, 17, &s, &GuidanceSpec::NONE).unwrap();
        for spec in [
            GuidanceSpec::classifier(0.0),
            GuidanceSpec::uncertainty(0.0),
            GuidanceSpec::uncertainty(0.0).with_source(GradientSource::FiniteDifference),
        ] {
            let g = guided_epsilon(&backend, &backend, &x, 1, 17, &s, &spec).unwrap();
            assert_eq!(
                g.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                plain.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert!(guided_epsilon(&backend, &backend, &x, 1, 17, &s, &GuidanceSpec::classifier(-1.0)).is_err());
    }

    #[test]
    fn classifier_guidance_matches_formula_and_finite_difference() {
        let s = sched();
        let w = world();
        let backend = OracleBackend::new(&w, &s, Conditioning::Unconditional).unwrap();
        let (x, y, t, scale) = ([0.8, 1.1], 2, 12, 10.0);
        let g = guided_epsilon(&backend, &backend, &x, y, t, &s, &GuidanceSpec::classifier(scale)).unwrap();
        let marginal = w.marginal_at(&s, t).unwrap();
        let eps = backend.predict(&x, Some(y), t).unwrap();
        let k = (1.0 - s.alpha_bar(t).unwrap()).sqrt();
        let grad = marginal.log_posterior_grad(&x, y).unwrap();
        let expected: Vec<f64> = eps.iter().zip(&grad).map(|(e, g)| e - k * scale * g).collect();
        assert!(rel(&g, &expected) < 1e-14);

        let fd = guided_epsilon(
            &backend,
            &backend,
            &x,
            y,
            t,
            &s,
            &GuidanceSpec::classifier(scale).with_source(GradientSource::FiniteDifference),
        )
        .unwrap();
        assert!(rel(&fd, &g) <= 1e-4, "{fd:?} vs {g:?}");
    }

    #[test]
    fn uncertainty_term_vanishes_along_symmetry_axis() {
        let s = sched();
        let pair = GaussianMixtureOracle::from_specs(&[
            ComponentSpec {
                mean: vec![-3.0, 0.0],
                covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                label: 0,
                weight: 0.5,
            },
            ComponentSpec {
                mean: vec![3.0, 0.0],
                covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                label: 1,
                weight: 0.5,
            },
        ])
        .unwrap();
        let backend = OracleBackend::new(&pair, &s, Conditioning::Unconditional).unwrap();
        let x = [0.0, 0.9];
        let plain = backend.predict(&x, Some(0), 20).unwrap();
        let g = guided_epsilon(&backend, &backend, &x, 0, 20, &s, &GuidanceSpec::uncertainty(3.0)).unwrap();
        assert!((g[0] - plain[0]).abs() < 1e-14);
    }

    #[test]
    fn ddim_step_identities() {
        let s = make_schedule(ScheduleKind::Linear, 3, 0.1, 0.3).unwrap();
        let x = [1.0, -2.0];
        let step = ddim_step(&x, &[0.4, 0.1], 1, &s).unwrap();
        let ab1 = s.alpha_bar(1).unwrap();
        for i in 0..2 {
            let e = [0.4, 0.1][i];
            let expect = (x[i] - (1.0 - ab1).sqrt() * e) / ab1.sqrt();
            assert!((step.prev[i] - expect).abs() < 1e-14);
            assert!((step.pred_x0[i] - expect).abs() < 1e-14);
        }
        let (next, _) = transfer(&x, &[0.0, 0.0], 0.5, 0.5);
        assert_eq!(next, x.to_vec());
        assert!(ddim_step(&x, &[0.0], 1, &s).is_err());
        assert!(ddim_step(&x, &[0.0, 0.0], 0, &s).is_err());
    }

    #[test]
    fn inversion_no_op_and_single_step_roundtrip() {
        let s = sched();
        let w = world();
        let backend = OracleBackend::new(&w, &s, Conditioning::Unconditional).unwrap();
        let (next, _) = transfer(&[0.3, 0.2], &[5.0, -4.0], 0.7, 0.7);
        assert!(rel(&next, &[0.3, 0.2]) < 1e-15);

        let mut worst: f64 = 0.0;
        for t in (1..s.steps()).step_by(7) {
            let x = s.q_sample(&[4.0, 0.0], t, &[0.6, -0.9]).unwrap();
            let up = ddim_invert_step(&x, &backend, Some(0), t, &s).unwrap();
            let eps = backend.predict(&up, Some(0), t + 1).unwrap();
            let back = ddim_step(&up, &eps, t + 1, &s).unwrap().prev;
            worst = worst.max(rel(&back, &x));
        }
        assert!(worst <= 1e-3, "worst single-step roundtrip {worst}");
        assert!(ddim_invert_step(&[0.0, 0.0], &backend, None, s.steps(), &s).is_err());
    }

    #[test]
    fn one_step_chain_equals_single_operations() {
        let s = make_schedule(ScheduleKind::Linear, 2, 0.3, 0.5).unwrap();
        let w = world();
        let backend = OracleBackend::new(&w, &s, Conditioning::Unconditional).unwrap();
        let x = [0.5, 0.25];
        let traj = sample_chain(&backend, &backend, &s, &GuidanceSpec::NONE, 0, &x, Direction::Generate, 1, 0).unwrap();
        assert_eq!(traj.steps, vec![1, 0]);
        let eps = backend.predict(&x, Some(0), 1).unwrap();
        assert_eq!(traj.end(), ddim_step(&x, &eps, 1, &s).unwrap().prev.as_slice());

        let inv = sample_chain(&backend, &backend, &s, &GuidanceSpec::NONE, 0, &x, Direction::Invert, 0, 1).unwrap();
        assert_eq!(inv.end(), ddim_invert_step(&x, &backend, Some(0), 0, &s).unwrap().as_slice());
        assert!(sample_chain(&backend, &backend, &s, &GuidanceSpec::NONE, 0, &x, Direction::Invert, 1, 0).is_err());
    }

    #[test]
    fn divergence_guard_reports_step() {
        let s = sched();
        let w = world();
        let backend = OracleBackend::new(&w, &s, Conditioning::Unconditional).unwrap();
        let err = sample_chain(
            &backend,
            &backend,
            &s,
            &GuidanceSpec::NONE,
            0,
            &[4e6, 0.0],
            Direction::Generate,
            s.steps(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1000, .. }), "{err}");
    }

    #[test]
    fn generate_then_invert_returns_to_start() {
        let s = sched();
        let w = world();
        let backend = OracleBackend::new(&w, &s, Conditioning::Unconditional).unwrap();
        let start = [0.4, -1.1];
        let gen = sample_chain(&backend, &backend, &s, &GuidanceSpec::NONE, 0, &start, Direction::Generate, s.steps(), 0).unwrap();
        let inv = sample_chain(&backend, &backend, &s, &GuidanceSpec::NONE, 0, gen.end(), Direction::Invert, 0, s.steps()).unwrap();
        assert!(rel(inv.end(), &start) <= 1e-2);
    }
}
