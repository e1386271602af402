//! Output-tree plumbing: run context, atomic writes, CSV text and the run log.

use std::fmt::Display;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ums_core::seed::child_seed;

use crate::error::{HarnessError, Result};
use crate::manifest::ExperimentManifest;

/// Name of the only file whose content may vary between identical runs.
pub const RUN_LOG: &str = "run.log";

/// A validated manifest bound to its output directory.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub manifest: ExperimentManifest,
    pub out: PathBuf,
}

impl RunContext {
    /// Applies the `--out` and `--seed` overrides, then validates.
    pub fn new(mut manifest: ExperimentManifest, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        if let Some(seed) = seed {
            manifest.seed = seed;
        }
        if let Some(out) = out {
            manifest.outputs = out;
        }
        manifest.validate()?;
        let out = manifest.outputs.clone();
        Ok(Self { manifest, out })
    }

    /// Creates (if needed) and returns `out/sub`.
    pub fn subdir(&self, sub: &str) -> Result<PathBuf> {
        let dir = self.out.join(sub);
        fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
        Ok(dir)
    }

    /// Seed of the named task, derived from the manifest root seed.
    pub fn seed(&self, op: &str) -> u64 {
        child_seed(self.manifest.seed, op, 0)
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(HarnessError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

/// Comma-separated text with a mandatory header row.
#[derive(Debug, Clone)]
pub struct Csv {
    width: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            width: header.len(),
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.width, "csv row width");
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

pub fn field(v: impl Display) -> String {
    v.to_string()
}

pub fn opt_field<T: Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Appends one line per verb with the manifest hash, wall time and the
/// workspace version shared by all crates.
pub fn append_run_log(out: &Path, verb: &str, manifest: &ExperimentManifest, elapsed: Duration) -> Result<()> {
    fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let path = out.join(RUN_LOG);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(HarnessError::io(&path))?;
    writeln!(
        f,
        "verb={verb} manifest_sha256={} seed={} wall_ms={} version={}",
        manifest.hash(),
        manifest.seed,
        elapsed.as_millis(),
        env!("CARGO_PKG_VERSION"),
    )
    .map_err(HarnessError::io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_before_validation() {
        let ctx = RunContext::new(ExperimentManifest::default(), Some("elsewhere".into()), Some(5)).unwrap();
        assert_eq!(ctx.manifest.seed, 5);
        assert_eq!(ctx.out, PathBuf::from("elsewhere"));
        assert_eq!(ctx.manifest.outputs, ctx.out);
        assert_ne!(ctx.seed("a"), ctx.seed("b"));
    }

    #[test]
    fn csv_header_and_atomic_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = Csv::new(&["a", "b"]);
        csv.row(&[field(1.5), opt_field::<f64>(None)]);
        let path = dir.path().join("x.csv");
        csv.write(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n1.5,\n");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn run_log_appends() {
        let dir = tempfile::tempdir().unwrap();
        let m = ExperimentManifest::default();
        append_run_log(dir.path(), "simulate", &m, Duration::from_millis(3)).unwrap();
        append_run_log(dir.path(), "train", &m, Duration::from_millis(4)).unwrap();
        let log = fs::read_to_string(dir.path().join(RUN_LOG)).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.contains(&m.hash()));
    }
}
