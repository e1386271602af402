use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    ClassGuided,
    InvertedNoise,
    UncertaintyGuided,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Data,
        Stage::ClassGuided,
        Stage::InvertedNoise,
        Stage::UncertaintyGuided,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::ClassGuided => "class_guided",
            Stage::InvertedNoise => "inverted_noise",
            Stage::UncertaintyGuided => "uncertainty_guided",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Format {
                what: "stage tag",
                reason: format!("unknown stage {s:?}"),
            })
    }
}

/// Points with labels, optional x0 entropies and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    /// Row-major `n x dim`.
    points: Vec<f64>,
    labels: Vec<usize>,
    entropies: Option<Vec<f64>>,
    stage: Stage,
    seed: u64,
}

impl SampleBatch {
    pub fn new(
        dim: usize,
        points: Vec<f64>,
        labels: Vec<usize>,
        entropies: Option<Vec<f64>>,
        stage: Stage,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("batch dimension must be positive"));
        }
        check_dim("batch points", labels.len() * dim, points.len())?;
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("batch point {}", i / dim),
                step: 0,
            });
        }
        if let Some(e) = &entropies {
            check_dim("batch entropies", labels.len(), e.len())?;
            if e.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("entropies must be finite and non-negative"));
            }
        }
        Ok(Self {
            dim,
            points,
            labels,
            entropies,
            stage,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn entropies(&self) -> Option<&[f64]> {
        self.entropies.as_deref()
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for p in self.points.chunks(self.dim) {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Unbiased sample covariance, row-major.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let m = self.mean();
        let n = self.len() as f64;
        let mut c = vec![vec![0.0; self.dim]; self.dim];
        for p in self.points.chunks(self.dim) {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    c[i][j] += (p[i] - m[i]) * (p[j] - m[j]);
                }
            }
        }
        for row in &mut c {
            row.iter_mut().for_each(|v| *v /= n - 1.0);
        }
        c
    }

    /// Writes `idx,label,stage,entropy,x0..x{d-1}`; the entropy field is
    /// empty when entropies are not populated.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let coords: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        writeln!(out, "idx,label,stage,entropy,{}", coords.join(","))?;
        for i in 0..self.len() {
            write!(out, "{i},{},{},", self.labels[i], self.stage)?;
            if let Some(e) = &self.entropies {
                write!(out, "{}", e[i])?;
            }
            for v in self.point(i) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Parses the format produced by [`SampleBatch::write_csv`]. The seed is
    /// not part of the file and must be supplied.
    pub fn read_csv<R: BufRead>(input: R, seed: u64) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "sample batch csv",
            reason,
        };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 5 || cols[..4] != ["idx", "label", "stage", "entropy"] {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let dim = cols.len() - 4;
        let (mut points, mut labels, mut entropies) = (Vec::new(), Vec::new(), Vec::new());
        let mut stage = None;
        let mut any_missing = false;
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(bad(format!("row {row} has {} fields", fields.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {row}: {e}")));
            labels.push(fields[1].parse().map_err(|e| bad(format!("row {row}: {e}")))?);
            let st: Stage = fields[2].parse()?;
            if *stage.get_or_insert(st) != st {
                return Err(bad(format!("row {row} mixes stages")));
            }
            if fields[3].is_empty() {
                any_missing = true;
            } else {
                entropies.push(num(fields[3])?);
            }
            for f in &fields[4..] {
                points.push(num(f)?);
            }
        }
        let stage = stage.ok_or_else(|| bad("no rows".into()))?;
        let entropies = match (any_missing, entropies.len()) {
            (true, 0) => None,
            (false, _) => Some(entropies),
            (true, _) => return Err(bad("entropy column partially populated".into())),
        };
        Self::new(dim, points, labels, entropies, stage, seed)
    }
}

/// Dumps one trajectory as `step,x0..x{d-1}` rows.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    let dim = traj.states.first().map_or(0, Vec::len);
    let coords: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "step,{}", coords.join(","))?;
    for (t, x) in traj.steps.iter().zip(&traj.states) {
        write!(out, "{t}")?;
        for v in x {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
