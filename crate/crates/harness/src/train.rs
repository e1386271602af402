//! `train`: toy denoiser and classifier on the oracle world.

use std::path::{Path, PathBuf};

use ums_core::toynet::checkpoint;
use ums_core::toynet::{
    classifier_accuracy, default_classifier, default_denoiser, train_classifier, train_denoiser, Mlp,
    TimestepWeight, TrainOutcome,
};

use crate::error::{core, HarnessError, Result};
use crate::output::{field, opt_field, write_atomic, Csv, RunContext};

pub const DENOISER_CKPT: &str = "denoiser.ckpt";
pub const CLASSIFIER_CKPT: &str = "classifier.ckpt";
pub const SUMMARY_CSV: &str = "summary.csv";
/// Trailing window of the loss curve averaged for the summary.
const TAIL: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub denoiser: TrainOutcome,
    pub classifier: TrainOutcome,
    /// Classifier argmax agreement with oracle labels on clean data.
    pub clean_accuracy: f64,
}

/// Untrained networks as initialised from the manifest seed.
pub fn initial_networks(ctx: &RunContext) -> Result<(Mlp, Mlp)> {
    let oracle = ctx.manifest.oracle()?;
    let (d, k) = (oracle.dim(), oracle.num_classes());
    let den = default_denoiser(d, k, ctx.seed("harness.train.denoiser.init")).map_err(core("toynet"))?;
    let cls = default_classifier(d, k, ctx.seed("harness.train.classifier.init")).map_err(core("toynet"))?;
    Ok((den, cls))
}

fn loss_csv(losses: &[f64]) -> Csv {
    let mut csv = Csv::new(&["step", "loss"]);
    for (i, l) in losses.iter().enumerate() {
        csv.row(&[field(i), field(l)]);
    }
    csv
}

fn tail_mean(losses: &[f64]) -> Option<f64> {
    let tail = &losses[losses.len().saturating_sub(TAIL)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Writes both checkpoints, `{denoiser,classifier}_loss.csv` and a summary
/// with the clean accuracy of the classifier.
pub fn run_train(ctx: &RunContext) -> Result<TrainSummary> {
    let m = &ctx.manifest;
    match m.training.timestep_weight {
        TimestepWeight::Uniform => {}
    }
    let dir = ctx.subdir("train")?;
    let oracle = m.oracle()?;
    let sched = m.schedule.build().map_err(core("schedule"))?;
    let (den, cls) = initial_networks(ctx)?;
    let cfg = &m.training.optimizer;
    let steps = m.training.steps;

    let denoiser = train_denoiser(den, &oracle, &sched, steps, cfg, ctx.seed("harness.train.denoiser"))
        .map_err(core("toynet denoiser training"))?;
    let classifier = train_classifier(cls, &oracle, &sched, steps, cfg, ctx.seed("harness.train.classifier"))
        .map_err(core("toynet classifier training"))?;
    let clean_accuracy = classifier_accuracy(
        &classifier.net,
        &oracle,
        m.training.eval_samples,
        0,
        ctx.seed("harness.train.accuracy"),
    )
    .map_err(core("toynet"))?;

    write_atomic(&dir.join(DENOISER_CKPT), &checkpoint::encode(&denoiser.net))?;
    write_atomic(&dir.join(CLASSIFIER_CKPT), &checkpoint::encode(&classifier.net))?;
    loss_csv(&denoiser.losses).write(&dir.join("denoiser_loss.csv"))?;
    loss_csv(&classifier.losses).write(&dir.join("classifier_loss.csv"))?;

    let mut summary = Csv::new(&["model", "steps", "first_loss", "tail_mean_loss", "clean_accuracy"]);
    summary.row(&[
        field("denoiser"),
        field(steps),
        opt_field(denoiser.losses.first()),
        opt_field(tail_mean(&denoiser.losses)),
        String::new(),
    ]);
    summary.row(&[
        field("classifier"),
        field(steps),
        opt_field(classifier.losses.first()),
        opt_field(tail_mean(&classifier.losses)),
        field(clean_accuracy),
    ]);
    summary.write(&dir.join(SUMMARY_CSV))?;

    Ok(TrainSummary {
        denoiser,
        classifier,
        clean_accuracy,
    })
}

/// Loads the checkpoints written by [`run_train`] from `out/train`.
pub fn load_checkpoints(out: &Path) -> Result<(Mlp, Mlp)> {
    let dir = out.join("train");
    let paths: Vec<PathBuf> = [DENOISER_CKPT, CLASSIFIER_CKPT].iter().map(|f| dir.join(f)).collect();
    let missing: Vec<String> = [DENOISER_CKPT, CLASSIFIER_CKPT]
        .iter()
        .zip(&paths)
        .filter(|(_, p)| !p.is_file())
        .map(|(f, _)| format!("train/{f}"))
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingInputs {
            dir: out.to_path_buf(),
            missing,
        });
    }
    let den = checkpoint::load(&paths[0]).map_err(core("toynet checkpoint"))?;
    let cls = checkpoint::load(&paths[1]).map_err(core("toynet checkpoint"))?;
    Ok((den, cls))
}
