use serde::{Deserialize, Serialize};

use super::{EpsilonModel, PosteriorProvider};
use crate::error::{check_dim, Error, Result};
use crate::oracle::GaussianMixtureOracle;
use crate::schedule::NoiseSchedule;

/// Whether the oracle noise predictor uses the class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// `eps(x_t, y, t)` ignores `y` and follows the full mixture.
    Unconditional,
    /// `eps(x_t, y, t)` follows the components labelled `y`; `y = None`
    /// falls back to the full mixture.
    ClassConditional,
}

/// The oracle world diffused to every step of a schedule, serving as both
/// an exact noise predictor and an exact time-conditioned classifier.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    marginals: Vec<GaussianMixtureOracle>,
    noise_scales: Vec<f64>,
    conditioning: Conditioning,
}

impl OracleBackend {
    pub fn new(
        oracle: &GaussianMixtureOracle,
        sched: &NoiseSchedule,
        conditioning: Conditioning,
    ) -> Result<Self> {
        let marginals = (0..=sched.steps())
            .map(|t| oracle.marginal_at(sched, t))
            .collect::<Result<Vec<_>>>()?;
        let noise_scales = sched.alpha_bars().iter().map(|ab| (1.0 - ab).sqrt()).collect();
        Ok(Self {
            marginals,
            noise_scales,
            conditioning,
        })
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    /// Diffused mixture at step `t`.
    pub fn marginal(&self, t: usize) -> Result<&GaussianMixtureOracle> {
        self.marginals
            .get(t)
            .ok_or_else(|| Error::invalid(format!("step {t} outside the schedule")))
    }

    /// Clean-data mixture.
    pub fn world(&self) -> &GaussianMixtureOracle {
        &self.marginals[0]
    }
}

impl EpsilonModel for OracleBackend {
    fn dim(&self) -> usize {
        self.marginals[0].dim()
    }

    fn predict(&self, x_t: &[f64], y: Option<usize>, t: usize) -> Result<Vec<f64>> {
        let marginal = self.marginal(t)?;
        check_dim("oracle epsilon", marginal.dim(), x_t.len())?;
        let k = self.noise_scales[t];
        if k == 0.0 {
            return Ok(vec![0.0; x_t.len()]);
        }
        let score = match (self.conditioning, y) {
            (Conditioning::ClassConditional, Some(class)) => marginal.class_score(x_t, class)?,
            _ => marginal.score(x_t)?,
        };
        Ok(score.into_iter().map(|s| -k * s).collect())
    }
}

impl PosteriorProvider for OracleBackend {
    fn num_classes(&self) -> usize {
        self.marginals[0].num_classes()
    }

    fn probs(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.marginal(t)?.class_probs(x_t)
    }

    fn analytic_log_posterior_grad(&self, x_t: &[f64], y: usize, t: usize) -> Option<Result<Vec<f64>>> {
        Some(self.marginal(t).and_then(|m| m.log_posterior_grad(x_t, y)))
    }

    fn analytic_entropy_grad(&self, x_t: &[f64], t: usize) -> Option<Result<Vec<f64>>> {
        Some(
            self.marginal(t)
                .and_then(|m| m.posterior(x_t))
                .map(|r| r.entropy_grad),
        )
    }
}
