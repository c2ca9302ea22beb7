//! Run configuration: a versioned TOML document with every knob of the
//! pipeline. Unknown keys are rejected and schedules are checked for
//! summability when the file is parsed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cantor::{antoine_system, CantorError, CantorSystem, IfsParams, Placement};
use crate::surface::{BudgetSchedule, BuildMode, SurfaceConfig};
use crate::tree::TreeConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown schedule `{0}`; use paper, mesh or geometric:<a>,<ratio>")]
    Schedule(String),
    #[error(transparent)]
    Cantor(#[from] CantorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Ternary {
        #[serde(default = "desk")]
        placement: Placement,
    },
    Ifs {
        #[serde(default = "desk")]
        placement: Placement,
        #[serde(default = "IfsParams::default_pair")]
        params: IfsParams,
    },
    Antoine {
        #[serde(default = "desk")]
        placement: Placement,
        /// Links per chain.
        m: usize,
        /// Chain stages.
        stages: usize,
        /// Tube-to-core ratio of the seed ring.
        aspect: f64,
    },
}

fn desk() -> Placement {
    Placement::Desk { diameter: 1e-4, height: 4e-4 }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Ternary { placement: desk() }
    }
}

impl GeneratorSpec {
    pub fn system(&self) -> Result<CantorSystem, ConfigError> {
        Ok(match self {
            GeneratorSpec::Ternary { placement } => CantorSystem::ternary(*placement),
            GeneratorSpec::Ifs { placement, params } => CantorSystem::ifs(params.clone(), *placement)?,
            GeneratorSpec::Antoine { placement, m, stages, aspect } => antoine_system(*m, CantorSystem::default_seed(*aspect), *stages)?.placed(*placement),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::Ternary { .. } => "ternary",
            GeneratorSpec::Ifs { .. } => "ifs",
            GeneratorSpec::Antoine { .. } => "antoine",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Vertices sampled per site in the neighborhood and continuity checks.
    pub samples: usize,
    pub self_intersection: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { samples: 2048, self_intersection: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: BuildMode,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default = "BudgetSchedule::mesh_default")]
    pub schedule: BudgetSchedule,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_depth() -> usize {
    3
}

fn default_seed() -> u64 {
    1
}

fn default_mode() -> BuildMode {
    BuildMode::Mesh
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            depth: default_depth(),
            seed: default_seed(),
            mode: BuildMode::Mesh,
            generator: GeneratorSpec::default(),
            schedule: BudgetSchedule::mesh_default(),
            tree: TreeConfig::default(),
            surface: SurfaceConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema { found: self.schema_version });
        }
        if self.depth == 0 {
            return Err(ConfigError::Invalid("depth must be at least 1".into()));
        }
        self.schedule.validate(self.surface.n).map_err(ConfigError::Invalid)?;
        self.surface.validate().map_err(ConfigError::Invalid)?;
        if self.mode == BuildMode::Mesh && self.surface.n != 2 {
            return Err(ConfigError::Invalid("meshes are built for n = 2 only".into()));
        }
        if let GeneratorSpec::Antoine { aspect, .. } = self.generator {
            if !(aspect > 0.0 && aspect < 1.0) {
                return Err(ConfigError::Invalid(format!("antoine seed aspect must lie in (0, 1), got {aspect}")));
            }
        }
        Ok(())
    }
}

/// `paper`, `mesh` (the default geometric schedule) or `geometric:<a>,<ratio>`.
pub fn parse_schedule(name: &str) -> Result<BudgetSchedule, ConfigError> {
    match name {
        "paper" => Ok(BudgetSchedule::Paper),
        "mesh" => Ok(BudgetSchedule::mesh_default()),
        _ => {
            let rest = name.strip_prefix("geometric:").ok_or_else(|| ConfigError::Schedule(name.into()))?;
            let (a, r) = rest.split_once(',').ok_or_else(|| ConfigError::Schedule(name.into()))?;
            let a = a.trim().parse().map_err(|_| ConfigError::Schedule(name.into()))?;
            let ratio = r.trim().parse().map_err(|_| ConfigError::Schedule(name.into()))?;
            Ok(BudgetSchedule::Geometric { a, ratio })
        }
    }
}
