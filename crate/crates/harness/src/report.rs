//! `report`: whitespace-separated plot data from earlier runs. Nothing is
//! rendered; every file starts with a `#` column line that gnuplot skips.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ums_core::sampler::SampleBatch;

use crate::error::{core, HarnessError, Result};
use crate::output::write_atomic;
use crate::simulate::{METRICS_CSV, METRICS_HEADER};
use crate::ums::STAGE_FILES;

pub const HISTOGRAM_BINS: usize = 20;

/// Inputs that must exist under the results directory.
pub fn required_inputs() -> Vec<String> {
    STAGE_FILES
        .iter()
        .map(|f| format!("ums/{f}"))
        .chain([format!("simulate/{METRICS_CSV}")])
        .collect()
}

fn stage_letter(file: &str) -> &str {
    file.trim_end_matches(".csv")
}

fn read_batch(path: &Path) -> Result<SampleBatch> {
    let f = fs::File::open(path).map_err(HarnessError::io(path))?;
    SampleBatch::read_csv(BufReader::new(f), 0).map_err(core("report"))
}

/// Histogram of `values` over `[0, max]` with the upper edge inclusive.
pub fn histogram(values: &[f64], max: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for v in values {
        let k = ((v / max) * bins as f64).floor().max(0.0) as usize;
        counts[k.min(bins - 1)] += 1;
    }
    counts
}

fn histogram_text(values: &[f64], max: f64) -> String {
    let mut s = String::from("# bin_low bin_high count fraction\n");
    let width = max / HISTOGRAM_BINS as f64;
    for (k, c) in histogram(values, max, HISTOGRAM_BINS).iter().enumerate() {
        let frac = *c as f64 / values.len() as f64;
        s.push_str(&format!("{} {} {c} {frac}\n", k as f64 * width, (k + 1) as f64 * width));
    }
    s
}

fn scatter_text(batch: &SampleBatch) -> String {
    let coords: Vec<String> = (0..batch.dim()).map(|i| format!("x{i}")).collect();
    let mut s = format!("# {} label entropy\n", coords.join(" "));
    for i in 0..batch.len() {
        for v in batch.point(i) {
            s.push_str(&format!("{v} "));
        }
        let e = batch.entropies().map_or(f64::NAN, |e| e[i]);
        s.push_str(&format!("{} {e}\n", batch.labels()[i]));
    }
    s
}

fn metrics_text(csv: &str, path: &Path) -> Result<String> {
    let bad = |reason: String| HarnessError::Core {
        module: "report",
        source: ums_core::Error::Format {
            what: "metrics csv",
            reason: format!("{}: {reason}", path.display()),
        },
    };
    let mut lines = csv.lines();
    if lines.next() != Some(METRICS_HEADER.join(",").as_str()) {
        return Err(bad("unexpected header".into()));
    }
    let mut s = format!("# index {}\n", METRICS_HEADER.join(" "));
    for (i, line) in lines.filter(|l| !l.is_empty()).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != METRICS_HEADER.len() {
            return Err(bad(format!("row {i} has {} fields", fields.len())));
        }
        s.push_str(&format!("{i} {}\n", fields.join(" ")));
    }
    Ok(s)
}

fn loss_text(csv: &str) -> String {
    let mut s = String::from("# step loss\n");
    for line in csv.lines().skip(1).filter(|l| !l.is_empty()) {
        s.push_str(&line.replace(',', " "));
        s.push('\n');
    }
    s
}

/// Reads `results/ums` and `results/simulate` (and, when present, the
/// training loss curves) and writes plot data under `results/report`.
/// Returns the written paths in order.
pub fn run_report(results: &Path) -> Result<Vec<PathBuf>> {
    let missing: Vec<String> = required_inputs()
        .into_iter()
        .filter(|f| !results.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingInputs {
            dir: results.to_path_buf(),
            missing,
        });
    }
    let dir = results.join("report");
    fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;

    let batches = STAGE_FILES
        .iter()
        .map(|f| read_batch(&results.join("ums").join(f)))
        .collect::<Result<Vec<_>>>()?;
    let classes = batches
        .iter()
        .flat_map(|b| b.labels().iter().copied())
        .max()
        .map_or(2, |m| (m + 1).max(2));
    let max_entropy = (classes as f64).ln();

    let mut files = Vec::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        files.push(path);
        Ok(())
    };
    for (batch, file) in batches.iter().zip(STAGE_FILES) {
        let stage = stage_letter(file);
        if let Some(e) = batch.entropies() {
            emit(format!("entropy_hist_{stage}.dat"), histogram_text(e, max_entropy))?;
        }
        emit(format!("scatter_{stage}.dat"), scatter_text(batch))?;
    }

    let metrics_path = results.join("simulate").join(METRICS_CSV);
    let csv = fs::read_to_string(&metrics_path).map_err(HarnessError::io(&metrics_path))?;
    emit("metrics_bars.dat".into(), metrics_text(&csv, &metrics_path)?)?;

    for model in ["denoiser", "classifier"] {
        let path = results.join("train").join(format!("{model}_loss.csv"));
        if path.is_file() {
            let csv = fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
            emit(format!("loss_{model}.dat"), loss_text(&csv))?;
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_bins_and_edges() {
        let max = 3f64.ln();
        let h = histogram(&[0.0, max, max * 0.5, max * 0.049, max * 0.15], max, 10);
        assert_eq!(h, vec![2, 1, 0, 0, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn empty_directory_lists_every_input() {
        let dir = tempfile::tempdir().unwrap();
        match run_report(dir.path()) {
            Err(HarnessError::MissingInputs { missing, .. }) => assert_eq!(missing, required_inputs()),
            other => panic!("{other:?}"),
        }
        assert_eq!(required_inputs().len(), 4);
    }

    #[test]
    fn metrics_header_is_checked() {
        let good = format!("{}\ndisk,ldct,fbp,30,0.9,0.01,0.001\n", METRICS_HEADER.join(","));
        let text = metrics_text(&good, Path::new("m.csv")).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0 disk ldct fbp 30 0.9 0.01 0.001");
        assert!(metrics_text("a,b\n", Path::new("m.csv")).is_err());
    }
}
