//! Experiment manifest: one JSON document holding every knob of a run.
//!
//! Unknown keys are rejected and `version` must be present. All stochastic
//! operations derive their seeds from `seed` through
//! [`ums_core::seed::child_seed`] with a fixed operation name per task.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ums_core::ctsim::{PhantomKind, ProtocolSpec};
use ums_core::oracle::{default_world_specs, ComponentSpec, GaussianMixtureOracle};
use ums_core::sampler::Conditioning;
use ums_core::schedule::{ScheduleKind, ScheduleSpec};
use ums_core::toynet::{OptimizerConfig, TimestepWeight};

use crate::error::{HarnessError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub version: u32,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub world: WorldSpec,
    pub training: TrainingSpec,
    pub generation: GenerationSpec,
    /// Output directory; relative paths resolve against the working directory.
    pub outputs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Mixture components of the low-dimensional oracle world.
    pub oracle: Vec<ComponentSpec>,
    pub ct: CtSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtSpec {
    pub image_size: usize,
    pub phantoms: Vec<PhantomKind>,
    /// Protocols to simulate. Metrics are taken against the ideal protocol,
    /// which is always simulated as the reference.
    pub protocols: Vec<ProtocolSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    pub timestep_weight: TimestepWeight,
    /// Fresh oracle samples used to score the trained classifier.
    pub eval_samples: usize,
}

/// Which noise predictor and classifier drive generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Exact oracle scores and posteriors.
    Oracle,
    /// Checkpoints written by the `train` verb; guidance gradients are
    /// taken by finite differences.
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSpec {
    pub class_scale: f64,
    pub uncertainty_scale: f64,
    pub n_per_class: usize,
    pub model: ModelSource,
    /// Label use of the oracle noise predictor; ignored for trained models.
    pub conditioning: Conditioning,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            seed: 20_240_917,
            schedule: ScheduleSpec {
                kind: ScheduleKind::Linear,
                steps: 1000,
                beta_min: 1e-4,
                beta_max: 0.02,
            },
            world: WorldSpec {
                oracle: default_world_specs(),
                ct: CtSpec {
                    image_size: 128,
                    phantoms: vec![PhantomKind::default_disk(), PhantomKind::SheppLogan],
                    protocols: vec![ProtocolSpec::ldct(), ProtocolSpec::svct(), ProtocolSpec::lact()],
                },
            },
            training: TrainingSpec {
                steps: 2000,
                optimizer: OptimizerConfig::default(),
                timestep_weight: TimestepWeight::Uniform,
                eval_samples: 2000,
            },
            generation: GenerationSpec {
                class_scale: 10.0,
                uncertainty_scale: 3.0,
                n_per_class: 100,
                model: ModelSource::Oracle,
                conditioning: Conditioning::Unconditional,
            },
            outputs: PathBuf::from("out"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Manifest(msg.into())
}

impl ExperimentManifest {
    /// Parses and validates manifest text.
    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Manifest(msg) => invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn oracle(&self) -> Result<GaussianMixtureOracle> {
        GaussianMixtureOracle::from_specs(&self.world.oracle).map_err(|e| invalid(format!("world.oracle: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(invalid(format!(
                "unsupported version {}, expected {MANIFEST_VERSION}",
                self.version
            )));
        }
        self.schedule.build().map_err(|e| invalid(format!("schedule: {e}")))?;
        self.oracle()?;

        let ct = &self.world.ct;
        if ct.image_size < 32 {
            return Err(invalid(format!("world.ct.image_size must be >= 32, got {}", ct.image_size)));
        }
        if ct.phantoms.is_empty() || ct.protocols.is_empty() {
            return Err(invalid("world.ct needs at least one phantom and one protocol"));
        }
        let mut names = HashSet::new();
        if let Some(p) = ct.phantoms.iter().find(|p| !names.insert(p.name())) {
            return Err(invalid(format!("duplicate phantom {:?}", p.name())));
        }
        let mut names = HashSet::new();
        for p in &ct.protocols {
            p.validate().map_err(|e| invalid(format!("protocol {}: {e}", p.name)))?;
            if !names.insert(p.name) {
                return Err(invalid(format!("duplicate protocol {}", p.name)));
            }
        }

        self.training
            .optimizer
            .validate()
            .map_err(|e| invalid(format!("training.optimizer: {e}")))?;
        if self.training.eval_samples == 0 {
            return Err(invalid("training.eval_samples must be positive"));
        }

        let g = &self.generation;
        for (what, v) in [("class_scale", g.class_scale), ("uncertainty_scale", g.uncertainty_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("generation.{what} must be finite and >= 0, got {v}")));
            }
        }
        if g.n_per_class == 0 {
            return Err(invalid("generation.n_per_class must be positive"));
        }
        Ok(())
    }
}
