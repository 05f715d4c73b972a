//! Declarative scenario files (TOML).
//!
//! ```toml
//! [geometry]
//! lx = 1.0
//! ly = 1.0
//! nx = 100
//! ny = 100
//! [[geometry.notches]]
//! start = [0.0, 0.5]
//! end = [0.5, 0.5]
//!
//! [material]
//! lambda = 121154.0
//! mu = 80770.0
//! gc = 2.7
//! lc = 0.06
//!
//! [schedule]
//! segments = [{ count = 350, delta_u = 2e-5 }]
//!
//! [run]
//! mode = "ifenn"
//!
//! [training]
//! increments = [300, 310]
//! ```
//!
//! Omitted sections and keys take their defaults; unknown keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::driver::{tension_boundary, BoundarySpec, LoadSchedule, RunConfig};
use crate::elasticity::MaterialParams;
use crate::error::{Error, Result};
use crate::mesh::{build_mesh, NotchRepresentation, NotchSpec, StructuredMesh};
use crate::picnn::{Architecture, InitScale, LossKind, StencilKind, TrainConfig};

/// Version of the scenario file layout.
pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Free-form label copied into output headers.
    #[serde(default)]
    pub name: String,
    pub geometry: Geometry,
    pub material: MaterialSection,
    pub schedule: LoadSchedule,
    #[serde(default = "tension_boundary")]
    pub boundary: Vec<BoundarySpec>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
    #[serde(default)]
    pub paths: Paths,
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub notches: Vec<NotchConfig>,
}

/// Straight notch between two points on a grid line; the orientation follows from the endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotchConfig {
    pub start: [f64; 2],
    pub end: [f64; 2],
    #[serde(default)]
    pub representation: NotchRepresentation,
}

impl NotchConfig {
    pub fn to_spec(&self) -> Result<NotchSpec<f64>> {
        let [x0, y0] = self.start;
        let [x1, y1] = self.end;
        let spec = if y0 == y1 && x0 != x1 {
            NotchSpec::horizontal(x0.min(x1), x0.max(x1), y0)
        } else if x0 == x1 && y0 != y1 {
            NotchSpec::vertical(x0, y0.min(y1), y0.max(y1))
        } else {
            return Err(Error::Config(format!(
                "notch {:?} -> {:?} must be a non-empty horizontal or vertical segment",
                self.start, self.end
            )));
        };
        Ok(spec.with_representation(self.representation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaneModel {
    /// The only supported 2D reduction.
    #[default]
    Strain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub lambda: f64,
    pub mu: f64,
    pub gc: f64,
    pub lc: f64,
    #[serde(default)]
    pub plane: PlaneModel,
}

impl MaterialSection {
    pub fn params(&self) -> Result<MaterialParams<f64>> {
        MaterialParams::new(self.lambda, self.mu, self.gc, self.lc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Increments of the FEM run whose history maps form the training batch.
    pub increments: Vec<usize>,
    pub precision: Precision,
    pub architecture: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<InitScale>,
    /// History maps are divided by this before entering the network.
    pub input_scale: f64,
    pub loss: LossKind,
    pub stencil: StencilKind,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            increments: Vec::new(),
            precision: Precision::F32,
            architecture: Architecture::standard().channels,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            seed: t.rng_seed,
            init_scale: t.init_scale,
            input_scale: 1.0,
            loss: t.loss,
            stencil: t.stencil,
        }
    }
}

impl TrainingSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            rng_seed: self.seed,
            init_scale: self.init_scale.clone(),
            loss: self.loss,
            stencil: self.stencil,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            channels: self.architecture.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Root of all outputs; relative paths resolve against the config file's directory.
    pub output_dir: PathBuf,
    /// Model file; defaults to `model.json` inside the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            model: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate().map_err(|e| anchor(e, text))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Leading 16 hex digits of [`Self::hash`], used in file headers.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.version != SCENARIO_VERSION {
            return cfg(format!(
                "version: unsupported scenario version {} (expected {SCENARIO_VERSION})",
                self.version
            ));
        }
        self.material.params().map_err(|e| prefix("material", e))?;
        self.schedule
            .validate()
            .map_err(|e| prefix("schedule", e))?;
        self.run.validate().map_err(|e| prefix("run", e))?;
        self.mesh()?;
        let total = self.schedule.total_increments();
        if let Some(&n) = self
            .run
            .snapshot_increments
            .iter()
            .find(|&&n| n == 0 || n > total)
        {
            return cfg(format!(
                "snapshot_increments: increment {n} outside the schedule (1..={total})"
            ));
        }
        if let Some(t) = &self.training {
            t.architecture()
                .validate()
                .map_err(|e| prefix("training.architecture", e))?;
            t.train_config().validate()?;
            if !(t.input_scale.is_finite() && t.input_scale > 0.0) {
                return cfg(format!(
                    "input_scale: must be positive, got {}",
                    t.input_scale
                ));
            }
            if let Some(&n) = t.increments.iter().find(|&&n| n == 0 || n > total) {
                return cfg(format!(
                    "increments: training increment {n} outside the schedule (1..={total})"
                ));
            }
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<StructuredMesh<f64>> {
        let g = &self.geometry;
        let notches = g
            .notches
            .iter()
            .map(NotchConfig::to_spec)
            .collect::<Result<Vec<_>>>()?;
        build_mesh(g.lx, g.ly, g.nx, g.ny, &notches)
    }

    pub fn material(&self) -> MaterialParams<f64> {
        self.material.params().expect("validated at load")
    }

    pub fn training(&self) -> Result<&TrainingSection> {
        self.training
            .as_ref()
            .ok_or_else(|| Error::Config("the scenario has no [training] section".into()))
    }

    /// Model file location, relative paths resolved against `base`.
    pub fn model_path(&self, base: &Path) -> PathBuf {
        match &self.paths.model {
            Some(p) => base.join(p),
            None => base.join(&self.paths.output_dir).join("model.json"),
        }
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("[{section}] {m}")),
        other => other,
    }
}

/// Adds `line N` to a semantic error when the key it names occurs in the source.
fn anchor(e: Error, text: &str) -> Error {
    let Error::Config(msg) = e else { return e };
    let body = msg.rsplit_once("] ").map_or(msg.as_str(), |(_, r)| r);
    let path = body
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'))
        .next()
        .unwrap_or("");
    let key = path.rsplit('.').next().unwrap_or("");
    let found = (!key.is_empty())
        .then(|| {
            text.lines().position(|l| {
                let l = l.trim_start();
                l.starts_with(key) && l[key.len()..].trim_start().starts_with('=')
            })
        })
        .flatten();
    match found {
        Some(line) => Error::Config(format!("line {}: {msg}", line + 1)),
        None => Error::Config(msg),
    }
}
