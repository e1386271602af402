use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{softmax, Activation, Mlp};
use crate::error::{Error, Result};
use crate::oracle::GaussianMixtureOracle;
use crate::sampler::{EpsilonModel, PosteriorProvider};
use crate::schedule::NoiseSchedule;
use crate::seed;

/// Per-timestep weight of the denoising loss. Only the uniform weighting
/// is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepWeight {
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad optimizer settings {self:?}")))
        }
    }
}

struct Adam {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: OptimizerConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.cfg.learning_rate * mh / (vh.sqrt() + self.cfg.epsilon);
        }
    }
}

/// Mean over the batch of `‖net(input) − target‖²`, with its parameter
/// gradient.
pub fn regression_loss(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid("regression batch must be non-empty with one target per input"));
    }
    let b = inputs.len() as f64;
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let cache = net.forward_cached(x);
        let diff: Vec<f64> = cache.output().iter().zip(y).map(|(o, t)| o - t).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() / b;
        let d_out: Vec<f64> = diff.iter().map(|d| 2.0 * d / b).collect();
        let d_logits = match net.layers().last().map(|l| l.activation) {
            Some(Activation::Identity) => d_out,
            Some(Activation::Tanh) => d_out.iter().zip(cache.output()).map(|(d, a)| d * (1.0 - a * a)).collect(),
            Some(Activation::Relu) => d_out
                .iter()
                .zip(cache.logits())
                .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
                .collect(),
            _ => return Err(Error::invalid("regression loss needs a non-softmax output layer")),
        };
        net.backward(&cache, &d_logits, &mut grad);
    }
    Ok((loss, grad))
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Mean cross-entropy of a softmax head, with its parameter gradient.
pub fn cross_entropy_loss(net: &Mlp, inputs: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::invalid("classification batch must be non-empty with one label per input"));
    }
    if net.layers().last().map(|l| l.activation) != Some(Activation::Softmax) {
        return Err(Error::invalid("cross-entropy needs a softmax output layer"));
    }
    let b = inputs.len() as f64;
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        if y >= net.output_width() {
            return Err(Error::invalid(format!("label {y} outside 0..{}", net.output_width())));
        }
        let cache = net.forward_cached(x);
        loss -= log_softmax(cache.logits())[y] / b;
        let mut d = softmax(cache.logits());
        d[y] -= 1.0;
        d.iter_mut().for_each(|v| *v /= b);
        net.backward(&cache, &d, &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: Mlp,
    pub losses: Vec<f64>,
}

fn check_training_args(net: &Mlp, oracle: &GaussianMixtureOracle, cfg: &OptimizerConfig) -> Result<()> {
    cfg.validate()?;
    if net.data_dim() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            context: "network data input vs oracle",
            expected: oracle.dim(),
            got: net.data_dim(),
        });
    }
    Ok(())
}

/// A noised minibatch: `(x_t, t, eps, label)` per point, `t` uniform in
/// `t_min..=T`.
fn noised_batch(
    oracle: &GaussianMixtureOracle,
    sched: &NoiseSchedule,
    batch: usize,
    t_min: usize,
    seed: u64,
    op: &str,
    step: usize,
) -> Result<Vec<(Vec<f64>, usize, Vec<f64>, usize)>> {
    let data = oracle.sample_data(batch, seed::child_seed(seed, &format!("{op}.data"), step as u64))?;
    let mut rng = seed::stream(seed, &format!("{op}.noise"), step as u64);
    (0..batch)
        .map(|i| {
            let t = rng.random_range(t_min..=sched.steps());
            let eps: Vec<f64> = (0..oracle.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let x_t = sched.q_sample(data.point(i), t, &eps)?;
            Ok((x_t, t, eps, data.labels()[i]))
        })
        .collect()
}

fn optimize(
    mut net: Mlp,
    steps: usize,
    cfg: &OptimizerConfig,
    what: &str,
    mut loss_at: impl FnMut(&Mlp, usize) -> Result<(f64, Vec<f64>)>,
) -> Result<TrainOutcome> {
    let mut adam = Adam::new(*cfg, net.param_count());
    let mut params = net.params();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = loss_at(&net, step)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{what} loss"),
                step,
            });
        }
        adam.step(&mut params, &grad);
        net.set_params(&params)?;
        losses.push(loss);
    }
    Ok(TrainOutcome { net, losses })
}

/// Regresses the injected noise from `x_t` with `t` uniform in `1..=T` and
/// uniform timestep weighting. The class slot receives the true label.
pub fn train_denoiser(
    net: Mlp,
    oracle: &GaussianMixtureOracle,
    sched: &NoiseSchedule,
    steps: usize,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    check_training_args(&net, oracle, cfg)?;
    optimize(net, steps, cfg, "denoiser", |net, step| {
        let batch = noised_batch(oracle, sched, cfg.batch_size, 1, seed, "toynet.denoiser", step)?;
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for (x_t, t, eps, y) in batch {
            inputs.push(net.encode(&x_t, t, Some(y))?);
            targets.push(eps);
        }
        regression_loss(net, &inputs, &targets)
    })
}

/// Cross-entropy on noised inputs with `t` uniform in `0..=T`; `t = 0` is
/// clean data.
pub fn train_classifier(
    net: Mlp,
    oracle: &GaussianMixtureOracle,
    sched: &NoiseSchedule,
    steps: usize,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    check_training_args(&net, oracle, cfg)?;
    if net.output_width() != oracle.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "classifier outputs vs oracle classes",
            expected: oracle.num_classes(),
            got: net.output_width(),
        });
    }
    optimize(net, steps, cfg, "classifier", |net, step| {
        let batch = noised_batch(oracle, sched, cfg.batch_size, 0, seed, "toynet.classifier", step)?;
        let mut inputs = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for (x_t, t, _, y) in batch {
            inputs.push(net.encode(&x_t, t, None)?);
            labels.push(y);
        }
        cross_entropy_loss(net, &inputs, &labels)
    })
}

/// Default denoiser: `[x, 16-wide time embedding, one-hot class]` → 64 → 64 → d.
pub fn default_denoiser(dim: usize, classes: usize, seed: u64) -> Result<Mlp> {
    Mlp::init(
        &[dim + 16 + classes, 64, 64, dim],
        Activation::Tanh,
        Activation::Identity,
        16,
        classes,
        false,
        seed,
    )
}

/// Default classifier: `[x, 16-wide time embedding]` → 32 → 32 → softmax,
/// starting from uniform predictions.
pub fn default_classifier(dim: usize, classes: usize, seed: u64) -> Result<Mlp> {
    Mlp::init(
        &[dim + 16, 32, 32, classes],
        Activation::Tanh,
        Activation::Softmax,
        16,
        0,
        true,
        seed,
    )
}

/// Argmax agreement with oracle labels on `n` fresh points evaluated at step `t`.
pub fn classifier_accuracy(net: &Mlp, oracle: &GaussianMixtureOracle, n: usize, t: usize, seed: u64) -> Result<f64> {
    let data = oracle.sample_data(n, seed)?;
    let mut hits = 0;
    for i in 0..n {
        let p = net.forward(&net.encode(data.point(i), t, None)?);
        let arg = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(k, _)| k);
        hits += usize::from(arg == data.labels()[i]);
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_param: usize,
}

/// Floor on the denominator of the relative error, so parameters whose true
/// gradient is at roundoff level are judged on absolute agreement.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient of `loss` with central differences of step
/// `h` on every parameter.
pub fn gradient_check(
    net: &Mlp,
    h: f64,
    loss: impl Fn(&Mlp) -> Result<(f64, Vec<f64>)>,
) -> Result<GradCheck> {
    let (_, analytic) = loss(net)?;
    let base = net.params();
    let mut probe = net.clone();
    let mut p = base.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..base.len() {
        p[i] = base[i] + h;
        probe.set_params(&p)?;
        let up = loss(&probe)?.0;
        p[i] = base[i] - h;
        probe.set_params(&p)?;
        let down = loss(&probe)?.0;
        p[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (analytic[i] - numeric).abs() / scale;
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheck {
        params: base.len(),
        max_rel_error: worst.0,
        worst_param: worst.1,
    })
}

/// Trained denoiser exposed as a noise predictor.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    pub net: Mlp,
}

impl EpsilonModel for ToyDenoiser {
    fn dim(&self) -> usize {
        self.net.data_dim()
    }

    fn predict(&self, x_t: &[f64], y: Option<usize>, t: usize) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.net.encode(x_t, t, y)?))
    }
}

/// Trained classifier exposed as a posterior provider; no input gradients.
#[derive(Debug, Clone)]
pub struct ToyClassifier {
    pub net: Mlp,
}

impl PosteriorProvider for ToyClassifier {
    fn num_classes(&self) -> usize {
        self.net.output_width()
    }

    fn probs(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.net.encode(x_t, t, None)?))
    }

    fn log_probs(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let cache = self.net.forward_cached(&self.net.encode(x_t, t, None)?);
        Ok(log_softmax(cache.logits()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ComponentSpec;
    use crate::schedule::{make_schedule, ScheduleKind};

    fn sched() -> NoiseSchedule {
        make_schedule(ScheduleKind::Linear, 1000, 1e-4, 0.02).unwrap()
    }

    fn random_batch(n: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::stream(seed, "test.batch", 0);
        (0..n)
            .map(|_| (0..width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences_on_small_nets() {
        for (k, hidden) in [Activation::Tanh, Activation::Relu, Activation::Identity].into_iter().enumerate() {
            let net = Mlp::init(&[5, 7, 6, 3], hidden, Activation::Identity, 0, 0, false, k as u64).unwrap();
            let inputs = random_batch(4, 5, 10 + k as u64);
            let targets = random_batch(4, 3, 20 + k as u64);
            let r = gradient_check(&net, 1e-5, |n| regression_loss(n, &inputs, &targets)).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{hidden:?}: {r:?}");

            let mut clf = Mlp::init(&[5, 7, 3], hidden, Activation::Softmax, 0, 0, false, 30 + k as u64).unwrap();
            let p: Vec<f64> = clf.params().iter().map(|v| v * 2.0).collect();
            clf.set_params(&p).unwrap();
            let labels = [0, 2, 1, 2];
            let r = gradient_check(&clf, 1e-5, |n| cross_entropy_loss(n, &inputs, &labels)).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{hidden:?} softmax: {r:?}");
        }
    }

    #[test]
    fn uniform_classifier_starts_at_log_k() {
        let world = GaussianMixtureOracle::default_world();
        let net = default_classifier(2, 3, 1).unwrap();
        let inputs: Vec<Vec<f64>> = random_batch(16, 2, 2)
            .iter()
            .map(|x| net.encode(x, 10, None).unwrap())
            .collect();
        let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let (loss, _) = cross_entropy_loss(&net, &inputs, &labels).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-6);
        let out = train_classifier(net, &world, &sched(), 1, &OptimizerConfig::default(), 0).unwrap();
        assert!((out.losses[0] - 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn zero_steps_leave_the_net_unchanged() {
        let world = GaussianMixtureOracle::default_world();
        let net = default_denoiser(2, 3, 4).unwrap();
        let out = train_denoiser(net.clone(), &world, &sched(), 0, &OptimizerConfig::default(), 1).unwrap();
        assert_eq!(out.net, net);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let world = GaussianMixtureOracle::default_world();
        let cfg = OptimizerConfig {
            batch_size: 8,
            ..OptimizerConfig::default()
        };
        let run = || train_denoiser(default_denoiser(2, 3, 4).unwrap(), &world, &sched(), 20, &cfg, 9).unwrap();
        let (a, b) = (run(), run());
        let bytes = |v: &[f64]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>();
        assert_eq!(bytes(&a.losses), bytes(&b.losses));
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn linear_denoiser_learns_gaussian_noise_map() {
        // For x0 ~ N(0, I) the optimal predictor is eps = sqrt(1 - ab_t) x_t.
        let world = GaussianMixtureOracle::from_specs(&[ComponentSpec {
            mean: vec![0.0, 0.0],
            covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            label: 0,
            weight: 1.0,
        }])
        .unwrap();
        let s = sched();
        let net = Mlp::init(&[2 + 16, 2], Activation::Identity, Activation::Identity, 16, 0, false, 5).unwrap();
        let cfg = OptimizerConfig {
            learning_rate: 1e-2,
            ..OptimizerConfig::default()
        };
        let err = |net: &Mlp| {
            let mut total = 0.0;
            for i in 0..200 {
                let t = 800 + i;
                let x = [((i * 7) % 13) as f64 / 6.0 - 1.0, ((i * 5) % 11) as f64 / 5.0 - 1.0];
                let k = (1.0 - s.alpha_bar(t).unwrap()).sqrt();
                let out = net.forward(&net.encode(&x, t, None).unwrap());
                total += (out[0] - k * x[0]).powi(2) + (out[1] - k * x[1]).powi(2);
            }
            total / 200.0
        };
        let before = err(&net);
        let trained = train_denoiser(net, &world, &s, 2000, &cfg, 3).unwrap();
        let after = err(&trained.net);
        assert!(after * 10.0 <= before, "{before} -> {after}");
    }

    #[test]
    fn separable_two_class_world_is_learned() {
        let world = GaussianMixtureOracle::from_specs(&[
            ComponentSpec {
                mean: vec![-4.0, 0.0],
                covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                label: 0,
                weight: 0.5,
            },
            ComponentSpec {
                mean: vec![4.0, 0.0],
                covariance: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                label: 1,
                weight: 0.5,
            },
        ])
        .unwrap();
        let net = default_classifier(2, 2, 6).unwrap();
        let out = train_classifier(net, &world, &sched(), 2000, &OptimizerConfig::default(), 8).unwrap();
        let acc = classifier_accuracy(&out.net, &world, 2000, 1, 99).unwrap();
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn adapters_expose_predictions() {
        let clf = ToyClassifier {
            net: default_classifier(2, 3, 1).unwrap(),
        };
        let p = clf.probs(&[0.1, 0.2], 5).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = clf.log_probs(&[0.1, 0.2], 5).unwrap();
        assert!((lp[0] - p[0].ln()).abs() < 1e-12);
        let den = ToyDenoiser {
            net: default_denoiser(2, 3, 1).unwrap(),
        };
        assert_eq!(den.predict(&[0.0, 1.0], Some(1), 3).unwrap().len(), 2);
        assert_eq!(den.dim(), 2);
    }
}
