//! `ums`: three-stage generation and the entropy-lift summary.

use ums_core::metrics::{bootstrap_mean_ci, entropy_stats, EntropyStats};
use ums_core::sampler::{
    entropy, ums_generate, EpsilonModel, GradientSource, OracleBackend, PosteriorProvider, SampleBatch,
    UmsOutput, UmsSettings,
};
use ums_core::schedule::NoiseSchedule;
use ums_core::toynet::{ToyClassifier, ToyDenoiser};

use crate::error::{core, Result};
use crate::manifest::ModelSource;
use crate::output::{field, write_atomic, Csv, RunContext};
use crate::train::load_checkpoints;

pub const STAGE_FILES: [&str; 3] = ["stage_a.csv", "stage_b.csv", "stage_c.csv"];
pub const SUMMARY_CSV: &str = "entropy_summary.csv";
pub const LIFT_CSV: &str = "entropy_lift.csv";
pub const CI_LEVEL: f64 = 0.99;
pub const BOOTSTRAP_RESAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct StageEntropy {
    pub stats: EntropyStats,
    /// Percentile bootstrap interval of the mean at [`CI_LEVEL`].
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmsSummary {
    /// Stage B carries entropies of the inverted noise under the step-T
    /// posterior; stages A and C under the clean posterior.
    pub output: UmsOutput,
    pub entropy: [StageEntropy; 3],
    /// Stage C interval lies entirely above the stage A interval.
    pub lift_significant: bool,
}

fn with_terminal_entropy<C: PosteriorProvider + ?Sized>(
    batch: &SampleBatch,
    classifier: &C,
    t: usize,
) -> ums_core::Result<SampleBatch> {
    let e = (0..batch.len())
        .map(|i| Ok(entropy(&classifier.probs(batch.point(i), t)?)))
        .collect::<ums_core::Result<Vec<_>>>()?;
    SampleBatch::new(
        batch.dim(),
        batch.points().to_vec(),
        batch.labels().to_vec(),
        Some(e),
        batch.stage(),
        batch.seed(),
    )
}

fn generate<M, C>(model: &M, classifier: &C, sched: &NoiseSchedule, settings: &UmsSettings, seed: u64) -> Result<UmsOutput>
where
    M: EpsilonModel + ?Sized,
    C: PosteriorProvider + ?Sized,
{
    let mut out = ums_generate(model, classifier, sched, settings, seed).map_err(core("sampler"))?;
    out.stage_b = with_terminal_entropy(&out.stage_b, classifier, sched.steps()).map_err(core("sampler"))?;
    Ok(out)
}

/// Writes `stage_{a,b,c}.csv`, per-stage entropy statistics with bootstrap
/// intervals, and the stage A vs C comparison.
pub fn run_ums(ctx: &RunContext) -> Result<UmsSummary> {
    let m = &ctx.manifest;
    let dir = ctx.subdir("ums")?;
    let sched = m.schedule.build().map_err(core("schedule"))?;
    let g = &m.generation;
    let mut settings = UmsSettings {
        n_per_class: g.n_per_class,
        class_scale: g.class_scale,
        uncertainty_scale: g.uncertainty_scale,
        gradient_source: GradientSource::Analytic,
    };
    let seed = ctx.seed("harness.ums");
    let output = match g.model {
        ModelSource::Oracle => {
            let backend = OracleBackend::new(&m.oracle()?, &sched, g.conditioning).map_err(core("sampler"))?;
            generate(&backend, &backend, &sched, &settings, seed)?
        }
        ModelSource::Trained => {
            let (den, cls) = load_checkpoints(&ctx.out)?;
            settings.gradient_source = GradientSource::FiniteDifference;
            let (den, cls) = (ToyDenoiser { net: den }, ToyClassifier { net: cls });
            generate(&den, &cls, &sched, &settings, seed)?
        }
    };

    let batches = [&output.stage_a, &output.stage_b, &output.stage_c];
    let mut entropy = Vec::with_capacity(3);
    let mut summary = Csv::new(&[
        "stage", "posterior_step", "count", "mean", "std", "ci_low", "ci_high", "p10", "p50", "p90",
    ]);
    for (i, (batch, file)) in batches.iter().zip(STAGE_FILES).enumerate() {
        write_atomic(&dir.join(file), batch.to_csv_string().as_bytes())?;
        let values = batch.entropies().expect("all stages carry entropies");
        let stats = entropy_stats(values).map_err(core("metrics"))?;
        let ci = bootstrap_mean_ci(values, CI_LEVEL, BOOTSTRAP_RESAMPLES, ctx.seed(&format!("harness.ums.bootstrap.{i}")))
            .map_err(core("metrics"))?;
        let step = if i == 1 { sched.steps() } else { 0 };
        summary.row(&[
            field(batch.stage()),
            field(step),
            field(stats.count),
            field(stats.mean),
            field(stats.std),
            field(ci.0),
            field(ci.1),
            field(stats.deciles[0]),
            field(stats.deciles[4]),
            field(stats.deciles[8]),
        ]);
        entropy.push(StageEntropy { stats, ci });
    }
    summary.write(&dir.join(SUMMARY_CSV))?;

    let entropy: [StageEntropy; 3] = entropy.try_into().expect("three stages");
    let (a, c) = (&entropy[0], &entropy[2]);
    let lift_significant = c.ci.0 > a.ci.1;
    let mut lift = Csv::new(&[
        "stage_a_mean",
        "stage_c_mean",
        "difference",
        "stage_a_ci_high",
        "stage_c_ci_low",
        "intervals_disjoint",
    ]);
    lift.row(&[
        field(a.stats.mean),
        field(c.stats.mean),
        field(c.stats.mean - a.stats.mean),
        field(a.ci.1),
        field(c.ci.0),
        field(lift_significant),
    ]);
    lift.write(&dir.join(LIFT_CSV))?;

    Ok(UmsSummary {
        output,
        entropy,
        lift_significant,
    })
}
