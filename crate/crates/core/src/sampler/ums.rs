//! Three-stage boundary-sample generation.
//!
//! A: class-guided generation from fresh noise, one group per class.
//! B: unguided DDIM inversion of every A endpoint back to step T.
//! C: uncertainty-guided generation from the inverted noise.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{run_chains, entropy, Direction, EpsilonModel, GradientSource, GuidanceSpec, PosteriorProvider};
use super::{SampleBatch, Stage};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UmsSettings {
    pub n_per_class: usize,
    pub class_scale: f64,
    pub uncertainty_scale: f64,
    pub gradient_source: GradientSource,
}

impl Default for UmsSettings {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            class_scale: 10.0,
            uncertainty_scale: 3.0,
            gradient_source: GradientSource::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmsOutput {
    pub stage_a: SampleBatch,
    pub stage_b: SampleBatch,
    pub stage_c: SampleBatch,
}

/// Posterior entropy of each point under `classifier` at `t = 0`.
pub(crate) fn clean_entropies<C: PosteriorProvider + ?Sized>(
    classifier: &C,
    points: &[f64],
    dim: usize,
) -> Result<Vec<f64>> {
    points
        .chunks(dim)
        .map(|x| Ok(entropy(&classifier.probs(x, 0)?)))
        .collect()
}

pub fn ums_generate<M, C>(
    model: &M,
    classifier: &C,
    sched: &NoiseSchedule,
    settings: &UmsSettings,
    seed: u64,
) -> Result<UmsOutput>
where
    M: EpsilonModel + ?Sized,
    C: PosteriorProvider + ?Sized,
{
    if settings.n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be positive"));
    }
    let dim = model.dim();
    let classes = classifier.num_classes();
    let labels: Vec<usize> = (0..classes)
        .flat_map(|c| std::iter::repeat_n(c, settings.n_per_class))
        .collect();

    let mut noise = Vec::with_capacity(labels.len() * dim);
    for i in 0..labels.len() {
        let mut rng = seed::stream(seed, "ums.stage_a.noise", i as u64);
        noise.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }

    let class_spec = GuidanceSpec::classifier(settings.class_scale).with_source(settings.gradient_source);
    let a_points = run_chains(model, classifier, sched, &class_spec, &labels, &noise, Direction::Generate)?;
    let b_points = run_chains(model, classifier, sched, &GuidanceSpec::NONE, &labels, &a_points, Direction::Invert)?;
    let unc_spec = GuidanceSpec::uncertainty(settings.uncertainty_scale).with_source(settings.gradient_source);
    let c_points = run_chains(model, classifier, sched, &unc_spec, &labels, &b_points, Direction::Generate)?;

    let a_entropy = clean_entropies(classifier, &a_points, dim)?;
    let c_entropy = clean_entropies(classifier, &c_points, dim)?;
    Ok(UmsOutput {
        stage_a: SampleBatch::new(dim, a_points, labels.clone(), Some(a_entropy), Stage::ClassGuided, seed)?,
        stage_b: SampleBatch::new(dim, b_points, labels.clone(), None, Stage::InvertedNoise, seed)?,
        stage_c: SampleBatch::new(dim, c_points, labels, Some(c_entropy), Stage::UncertaintyGuided, seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::GaussianMixtureOracle;
    use crate::sampler::{Conditioning, OracleBackend};
    use crate::schedule::{make_schedule, ScheduleKind};

    fn setup() -> (NoiseSchedule, OracleBackend) {
        let s = make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap();
        let b = OracleBackend::new(&GaussianMixtureOracle::default_world(), &s, Conditioning::Unconditional).unwrap();
        (s, b)
    }

    #[test]
    fn batch_sizes_and_stage_tags() {
        let (s, b) = setup();
        let out = ums_generate(&b, &b, &s, &UmsSettings::default(), 1).unwrap();
        assert_eq!(out.stage_a.len(), 300);
        assert_eq!(out.stage_c.len(), 300);
        assert_eq!(out.stage_a.stage(), Stage::ClassGuided);
        assert_eq!(out.stage_b.stage(), Stage::InvertedNoise);
        assert_eq!(out.stage_c.stage(), Stage::UncertaintyGuided);
        assert!(out.stage_b.entropies().is_none());
        let max = 3f64.ln() + 1e-12;
        assert!(out.stage_c.entropies().unwrap().iter().all(|e| *e <= max));
    }

    #[test]
    fn zero_uncertainty_scale_reconstructs_stage_a() {
        let (s, b) = setup();
        let settings = UmsSettings {
            n_per_class: 10,
            uncertainty_scale: 0.0,
            ..UmsSettings::default()
        };
        let out = ums_generate(&b, &b, &s, &settings, 4).unwrap();
        for i in 0..out.stage_a.len() {
            let a = out.stage_a.point(i);
            let c = out.stage_c.point(i);
            let err = a.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err / norm <= 1e-2, "point {i}: {err}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (s, b) = setup();
        let settings = UmsSettings {
            n_per_class: 5,
            ..UmsSettings::default()
        };
        let x = ums_generate(&b, &b, &s, &settings, 8).unwrap();
        let y = ums_generate(&b, &b, &s, &settings, 8).unwrap();
        assert_eq!(x.stage_c.to_csv_string(), y.stage_c.to_csv_string());
        let z = ums_generate(&b, &b, &s, &settings, 9).unwrap();
        assert_ne!(x.stage_a.points(), z.stage_a.points());
    }
}
