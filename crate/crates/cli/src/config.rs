//! Strict per-command configuration files.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use specgrad::adv_train::AdvTrainConfig;
use specgrad::attack::{AttackConfig, GradMode};
use specgrad::dataset::GeneratorSpec;
use specgrad::losses::LossSpec;
use specgrad::operators::{ArchSpec, TrainConfig};
use specgrad::solvers::{ForcingPattern, SolverConfig};
use specgrad::{Error, Result};

/// Version tag every configuration file must carry.
pub const CONFIG_SCHEMA: &str = "specgrad-config/1";

/// Parse `text` (read from `path`) and check its schema tag.
pub fn parse<T: DeserializeOwned + Schema>(path: &Path, text: &str) -> Result<T> {
    let cfg: T = toml::from_str(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if cfg.schema() != CONFIG_SCHEMA {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("schema must be {CONFIG_SCHEMA:?}, got {:?}", cfg.schema()),
        });
    }
    Ok(cfg)
}

pub trait Schema {
    fn schema(&self) -> &str;
}

macro_rules! schema {
    ($($t:ty),*) => {
        $(impl Schema for $t {
            fn schema(&self) -> &str {
                &self.schema
            }
        })*
    };
}

schema!(GenData, Train, Attack, AdvTrain, EvalOod, Diagnose);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenData {
    pub schema: String,
    pub name: String,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Store fields truncated to this many points per axis.
    #[serde(default)]
    pub store_n: Option<usize>,
    pub generator: GeneratorSpec,
    pub solver: SolverConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Train {
    pub schema: String,
    pub data: PathBuf,
    #[serde(default)]
    pub val: Option<PathBuf>,
    pub arch: ArchSpec,
    /// Fit a scalar normalizer to the training samples.
    #[serde(default)]
    pub normalize: bool,
    /// Use one set of statistics for inputs and outputs.
    #[serde(default)]
    pub shared_normalizer: bool,
    #[serde(default)]
    pub init_seed: u64,
    pub train: TrainConfig,
}

fn with_solver() -> GradMode {
    GradMode::WithSolver
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attack {
    pub schema: String,
    pub model: PathBuf,
    /// Dataset whose inputs are attacked.
    pub data: PathBuf,
    /// Attack only the first `count` inputs.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default = "with_solver")]
    pub mode: GradMode,
    /// Per-frame modes for recurrent 2D students; defaults to `mode` for all.
    #[serde(default)]
    pub frame_modes: Option<Vec<GradMode>>,
    #[serde(default)]
    pub loss: LossSpec,
    /// Dataset used as the teacher dictionary of the approximated mode.
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    #[serde(default)]
    pub dict_size: Option<usize>,
    /// Teacher override; defaults to the solver recorded with the data.
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    pub attack: AttackConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvTrain {
    pub schema: String,
    pub model: PathBuf,
    pub data: PathBuf,
    /// Held-out set whose loss is reported before and after training.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Datasets evaluated after every round.
    #[serde(default)]
    pub pool: Vec<PathBuf>,
    pub adv: AdvTrainConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOod {
    pub schema: String,
    pub model: PathBuf,
    /// Model the deltas are taken against; defaults to `model`.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    pub pool: Vec<PathBuf>,
}

fn named_patterns() -> Vec<ForcingPattern> {
    vec![ForcingPattern::Diagonal, ForcingPattern::IsoCircles, ForcingPattern::Petals]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnose {
    pub schema: String,
    /// Output directory of an attack run.
    pub results: PathBuf,
    /// Dataset whose frame stacks get a spectral report.
    #[serde(default)]
    pub frames: Option<PathBuf>,
    #[serde(default = "named_patterns")]
    pub patterns: Vec<ForcingPattern>,
}
