//! Manifest-driven runner tying the core modules into reproducible
//! pipelines.
//!
//! Each verb reads an [`ExperimentManifest`] and writes into its own
//! subdirectory of the output tree:
//!
//! - `simulate/`: reconstructions, sinograms and `metrics.csv`.
//! - `train/`: checkpoints, loss curves and `summary.csv`.
//! - `ums/`: stage batches and the entropy-lift summary.
//! - `eval/`: checkpoint scores against the oracle.
//! - `report/`: gnuplot-ready `.dat` files.
//!
//! `run.log` at the root is the only file that differs between identical
//! runs.

pub mod error;
pub mod eval;
pub mod manifest;
pub mod output;
pub mod report;
pub mod simulate;
pub mod train;
pub mod ums;

use std::time::Instant;

pub use error::{HarnessError, Result};
pub use manifest::ExperimentManifest;
pub use output::RunContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Simulate,
    Train,
    Ums,
    Eval,
    Report,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Simulate => "simulate",
            Verb::Train => "train",
            Verb::Ums => "ums",
            Verb::Eval => "eval",
            Verb::Report => "report",
        }
    }

    /// Order in which `all` runs the verbs.
    pub const PIPELINE: [Verb; 5] = [Verb::Simulate, Verb::Train, Verb::Ums, Verb::Eval, Verb::Report];
}

/// Runs one verb and appends its line to the run log.
pub fn run_verb(ctx: &RunContext, verb: Verb) -> Result<()> {
    let start = Instant::now();
    match verb {
        Verb::Simulate => simulate::run_simulate(ctx).map(drop)?,
        Verb::Train => train::run_train(ctx).map(drop)?,
        Verb::Ums => ums::run_ums(ctx).map(drop)?,
        Verb::Eval => eval::run_eval(ctx).map(drop)?,
        Verb::Report => report::run_report(&ctx.out).map(drop)?,
    }
    output::append_run_log(&ctx.out, verb.as_str(), &ctx.manifest, start.elapsed())
}

/// Runs every verb in pipeline order.
pub fn run_all(ctx: &RunContext) -> Result<()> {
    Verb::PIPELINE.iter().try_for_each(|v| run_verb(ctx, *v))
}
