//! Closed-form Gaussian-mixture world.
//!
//! Every quantity the guidance formulas need (score, class posterior,
//! posterior entropy and its gradient) is available analytically here, and
//! the forward-diffused marginal of a mixture is again a mixture, so the
//! oracle doubles as an exact noise predictor at every step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::sampler::{SampleBatch, Stage};
use crate::schedule::NoiseSchedule;
use crate::seed;

/// Probabilities below this contribute nothing to entropy or its gradient.
pub const ZERO_PROB_CUTOFF: f64 = 1e-300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Serializable description of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    /// Row-major `d x d` covariance.
    pub covariance: Vec<Vec<f64>>,
    pub label: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
struct Component {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    label: usize,
    weight: f64,
    log_weight: f64,
    /// `-(d ln 2pi + ln det cov) / 2`
    log_norm: f64,
    chol: Cholesky<f64, Dyn>,
}

impl Component {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>, label: usize, weight: f64) -> Result<Self> {
        let d = mean.len();
        check_dim("covariance rows", d, cov.nrows())?;
        check_dim("covariance cols", d, cov.ncols())?;
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            mean,
            cov,
            precision,
            label,
            weight,
            log_weight: weight.ln(),
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
            chol,
        })
    }

    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    /// `grad log N(x) = P (mu - x)`
    fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.precision * (&self.mean - x)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMixtureOracle {
    dim: usize,
    num_classes: usize,
    components: Vec<Component>,
}

/// Class posterior at a point, with its entropy and entropy gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorReport {
    pub probs: Vec<f64>,
    /// Entropy in nats.
    pub entropy: f64,
    pub entropy_grad: Vec<f64>,
}

/// Everything a single point evaluation produces; shared by score,
/// posterior and guidance gradients.
struct PointEval {
    log_density: f64,
    score: DVector<f64>,
    class_log_probs: Vec<f64>,
    class_scores: Vec<DVector<f64>>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GaussianMixtureOracle {
    pub fn from_specs(specs: &[ComponentSpec]) -> Result<Self> {
        let first = specs
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        let mut components = Vec::with_capacity(specs.len());
        for spec in specs {
            check_dim("component mean", dim, spec.mean.len())?;
            check_dim("covariance rows", dim, spec.covariance.len())?;
            let mut cov = DMatrix::zeros(dim, dim);
            for (i, row) in spec.covariance.iter().enumerate() {
                check_dim("covariance cols", dim, row.len())?;
                for (j, v) in row.iter().enumerate() {
                    cov[(i, j)] = *v;
                }
            }
            if !(spec.weight >= 0.0 && spec.weight.is_finite()) {
                return Err(Error::invalid(format!("bad component weight {}", spec.weight)));
            }
            if spec.mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("component parameters must be finite"));
            }
            components.push(Component::new(
                DVector::from_column_slice(&spec.mean),
                cov,
                spec.label,
                spec.weight,
            )?);
        }
        Self::from_components(dim, components)
    }

    fn from_components(dim: usize, components: Vec<Component>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        let num_classes = components.iter().map(|c| c.label).max().unwrap_or(0) + 1;
        for class in 0..num_classes {
            if !components.iter().any(|c| c.label == class) {
                return Err(Error::invalid(format!("class {class} has no component")));
            }
        }
        Ok(Self {
            dim,
            num_classes,
            components,
        })
    }

    /// Three unit-covariance classes on a circle of radius 4 at 120 degree
    /// spacing, equal weights.
    pub fn default_world() -> Self {
        Self::from_specs(&default_world_specs()).expect("default world is valid")
    }

    pub fn specs(&self) -> Vec<ComponentSpec> {
        self.components
            .iter()
            .map(|c| ComponentSpec {
                mean: c.mean.iter().copied().collect(),
                covariance: (0..self.dim)
                    .map(|i| (0..self.dim).map(|j| c.cov[(i, j)]).collect())
                    .collect(),
                label: c.label,
                weight: c.weight,
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = DVector::zeros(self.dim);
        for c in &self.components {
            m += &c.mean * c.weight;
        }
        m.iter().copied().collect()
    }

    /// Mixture covariance `sum_k w_k (Sigma_k + mu_k mu_k^T) - m m^T`, row-major.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let m = DVector::from_vec(self.mean());
        let mut cov = -(&m * m.transpose());
        for c in &self.components {
            cov += (&c.cov + &c.mean * c.mean.transpose()) * c.weight;
        }
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| cov[(i, j)]).collect())
            .collect()
    }

    /// Forward-diffused marginal at step `t`: means scale by `sqrt(ab_t)`,
    /// covariances become `ab_t Sigma + (1 - ab_t) I`.
    pub fn marginal_at(&self, sched: &NoiseSchedule, t: usize) -> Result<Self> {
        let ab = sched.alpha_bar(t)?;
        self.diffused(ab)
    }

    pub(crate) fn diffused(&self, alpha_bar: f64) -> Result<Self> {
        let identity = DMatrix::<f64>::identity(self.dim, self.dim);
        let components = self
            .components
            .iter()
            .map(|c| {
                Component::new(
                    &c.mean * alpha_bar.sqrt(),
                    &c.cov * alpha_bar + &identity * (1.0 - alpha_bar),
                    c.label,
                    c.weight,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_components(self.dim, components)
    }

    fn eval(&self, x: &[f64]) -> Result<PointEval> {
        check_dim("oracle point", self.dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("oracle query point is not finite"));
        }
        let xv = DVector::from_column_slice(x);
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_weight + c.log_pdf(&xv))
            .collect();
        let scores: Vec<DVector<f64>> = self.components.iter().map(|c| c.score(&xv)).collect();
        let log_density = log_sum_exp(logs.iter().copied());

        let mut score = DVector::zeros(self.dim);
        for (l, s) in logs.iter().zip(&scores) {
            let r = (l - log_density).exp();
            if r > 0.0 {
                score += s * r;
            }
        }

        let mut class_log_probs = Vec::with_capacity(self.num_classes);
        let mut class_scores = Vec::with_capacity(self.num_classes);
        for class in 0..self.num_classes {
            let members = || {
                self.components
                    .iter()
                    .zip(&logs)
                    .filter(move |(c, _)| c.label == class)
                    .map(|(_, l)| *l)
            };
            let class_log = log_sum_exp(members());
            let mut s_c = DVector::zeros(self.dim);
            if class_log > f64::NEG_INFINITY {
                for ((c, l), s) in self.components.iter().zip(&logs).zip(&scores) {
                    if c.label == class {
                        let r = (l - class_log).exp();
                        if r > 0.0 {
                            s_c += s * r;
                        }
                    }
                }
            }
            class_log_probs.push(class_log - log_density);
            class_scores.push(s_c);
        }
        Ok(PointEval {
            log_density,
            score,
            class_log_probs,
            class_scores,
        })
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x)?.log_density)
    }

    /// `grad_x log p(x) = sum_k r_k(x) P_k (mu_k - x)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(x)?.score.iter().copied().collect())
    }

    /// Score of the mixture restricted to one class.
    pub fn class_score(&self, x: &[f64], class: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        Ok(self.eval(x)?.class_scores[class].iter().copied().collect())
    }

    pub fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(x)?.class_log_probs.iter().map(|l| l.exp()).collect())
    }

    /// `grad_x log p(y | x) = s_y(x) - s(x)`.
    pub fn log_posterior_grad(&self, x: &[f64], class: usize) -> Result<Vec<f64>> {
        self.check_class(class)?;
        let e = self.eval(x)?;
        Ok((&e.class_scores[class] - &e.score).iter().copied().collect())
    }

    pub fn posterior(&self, x: &[f64]) -> Result<PosteriorReport> {
        let e = self.eval(x)?;
        // The dominant class is recovered as 1 - sum(others) so that near-certain
        // posteriors keep full relative precision in the entropy.
        let top = e
            .class_log_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        let mut probs: Vec<f64> = e.class_log_probs.iter().map(|l| l.exp()).collect();
        let rest: f64 = probs
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != top)
            .map(|(_, p)| p)
            .sum();
        probs[top] = 1.0 - rest;
        let mut log_probs = e.class_log_probs.clone();
        log_probs[top] = (-rest).ln_1p();

        // grad p_c = p_c (s_c - s) for the minor classes; the dominant one
        // takes minus their sum.
        let mut grads: Vec<DVector<f64>> = probs
            .iter()
            .zip(&e.class_scores)
            .map(|(p, s_c)| (s_c - &e.score) * *p)
            .collect();
        let mut minor_sum = DVector::zeros(self.dim);
        for (c, g) in grads.iter().enumerate() {
            if c != top {
                minor_sum += g;
            }
        }
        grads[top] = -minor_sum;

        let mut entropy = 0.0;
        let mut grad = DVector::zeros(self.dim);
        for ((p, log_p), grad_p) in probs.iter().zip(&log_probs).zip(&grads) {
            if *p < ZERO_PROB_CUTOFF {
                continue;
            }
            entropy -= p * log_p;
            // grad U = -sum_c (1 + ln p_c) grad p_c
            grad -= grad_p * (1.0 + log_p);
        }
        Ok(PosteriorReport {
            probs,
            entropy: entropy.max(0.0),
            entropy_grad: grad.iter().copied().collect(),
        })
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::invalid(format!(
                "class {class} outside 0..{}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Draws `n` labelled points. Point `i` uses its own counter-derived stream.
    pub fn sample_data(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::invalid("sample_data needs n >= 1"));
        }
        let picker = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .map_err(|e| Error::invalid(format!("mixture weights: {e}")))?;
        let mut points = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = seed::stream(seed, "oracle.sample_data", i as u64);
            let k = picker.sample(&mut rng);
            let comp = &self.components[k];
            let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &comp.mean + comp.chol.l() * z;
            points.extend(x.iter());
            labels.push(comp.label);
        }
        let entropies = (0..n)
            .map(|i| Ok(self.posterior(&points[i * self.dim..(i + 1) * self.dim])?.entropy))
            .collect::<Result<Vec<_>>>()?;
        SampleBatch::new(self.dim, points, labels, Some(entropies), Stage::Data, seed)
    }
}

pub fn default_world_specs() -> Vec<ComponentSpec> {
    (0..3)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            ComponentSpec {
                mean: vec![4.0 * angle.cos(), 4.0 * angle.sin()],
                covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                label: k,
                weight: 1.0 / 3.0,
            }
        })
        .collect()
}

/// Exact noise prediction `-sqrt(1 - ab_t) * score_t(x_t)` of the
/// unconditional mixture.
pub fn exact_epsilon(
    oracle: &GaussianMixtureOracle,
    sched: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    let ab = sched.alpha_bar(t)?;
    if ab >= 1.0 {
        check_dim("exact_epsilon", oracle.dim(), x_t.len())?;
        return Ok(vec![0.0; x_t.len()]);
    }
    let score = oracle.marginal_at(sched, t)?.score(x_t)?;
    let k = -(1.0 - ab).sqrt();
    Ok(score.into_iter().map(|s| k * s).collect())
}
