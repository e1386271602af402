//! `eval`: scores trained checkpoints against the oracle.

use ums_core::sampler::{Conditioning, EpsilonModel, OracleBackend};
use ums_core::toynet::{classifier_accuracy, ToyDenoiser};

use crate::error::{core, Result};
use crate::output::{field, Csv, RunContext};
use crate::train::load_checkpoints;

pub const ACCURACY_CSV: &str = "classifier_accuracy.csv";
pub const DENOISER_CSV: &str = "denoiser_error.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub t: usize,
    pub accuracy: f64,
    /// Mean squared deviation per coordinate from the exact class-conditional
    /// noise prediction; undefined (NaN) at `t = 0`.
    pub denoiser_mse: f64,
}

/// Steps at which the checkpoints are scored: 0, T/4, T/2, 3T/4 and T.
pub fn eval_steps(steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..=4).map(|q| q * steps / 4).collect();
    ts.dedup();
    ts
}

/// Reads `out/train` checkpoints and writes per-step classifier accuracy
/// and denoiser error.
pub fn run_eval(ctx: &RunContext) -> Result<Vec<EvalRow>> {
    let m = &ctx.manifest;
    let (den, cls) = load_checkpoints(&ctx.out)?;
    let dir = ctx.subdir("eval")?;
    let sched = m.schedule.build().map_err(core("schedule"))?;
    let oracle = m.oracle()?;
    let exact = OracleBackend::new(&oracle, &sched, Conditioning::ClassConditional).map_err(core("sampler"))?;
    let den = ToyDenoiser { net: den };
    let n = m.training.eval_samples;

    let mut acc_csv = Csv::new(&["t", "samples", "accuracy"]);
    let mut den_csv = Csv::new(&["t", "samples", "mse_vs_exact"]);
    let mut rows = Vec::new();
    for (i, t) in eval_steps(sched.steps()).into_iter().enumerate() {
        let accuracy = classifier_accuracy(&cls, &oracle, n, t, ctx.seed(&format!("harness.eval.accuracy.{i}")))
            .map_err(core("toynet"))?;
        acc_csv.row(&[field(t), field(n), field(accuracy)]);

        let denoiser_mse = if t == 0 {
            f64::NAN
        } else {
            let batch = exact
                .marginal(t)
                .and_then(|mt| mt.sample_data(n, ctx.seed(&format!("harness.eval.denoiser.{i}"))))
                .map_err(core("oracle"))?;
            let mut sq = 0.0;
            for (k, &y) in batch.labels().iter().enumerate() {
                let x = batch.point(k);
                let got = den.predict(x, Some(y), t).map_err(core("toynet"))?;
                let want = exact.predict(x, Some(y), t).map_err(core("oracle"))?;
                sq += got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            let mse = sq / (n * oracle.dim()) as f64;
            den_csv.row(&[field(t), field(n), field(mse)]);
            mse
        };
        rows.push(EvalRow {
            t,
            accuracy,
            denoiser_mse,
        });
    }
    acc_csv.write(&dir.join(ACCURACY_CSV))?;
    den_csv.write(&dir.join(DENOISER_CSV))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_cover_both_ends() {
        assert_eq!(eval_steps(1000), vec![0, 250, 500, 750, 1000]);
        assert_eq!(eval_steps(2), vec![0, 1, 2]);
    }
}
