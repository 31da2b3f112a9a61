//! The run configuration: one JSON document, with a few scalar fields that
//! command-line flags may override.

use std::path::{Path, PathBuf};

use mefuse_core::analysis::EstimandSpec;
use mefuse_core::data::ColumnMap;
use mefuse_core::design::{AugmentMode, DEFAULT_AUGMENTATION_DRAWS};
use mefuse_core::gibbs::GibbsConfig;
use mefuse_core::models::MeasurementModel;
use mefuse_core::schema::Schema;
use mefuse_core::sim::{SimScenario, Table1Options};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Either a path to a schema JSON file or the schema itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    File(PathBuf),
    Inline(Schema),
}

/// A CSV file and how its columns map onto the schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub path: PathBuf,
    #[serde(flatten)]
    pub columns: ColumnMap,
}

/// Exactly one model source: a named preset, inline specs, or the CIA imputer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Preset(String),
    Inline(MeasurementModel),
    Cia,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetConfig {
    pub sex_var: String,
    pub black_var: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub male_level: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub black_yes_level: Option<String>,
    /// CSV of error-rate priors: `group,truth,a,b`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_priors: Option<PathBuf>,
    /// CSV of reporting priors: `group,truth,<one column per reported level>`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reporting_priors: Option<PathBuf>,
}

impl Default for PresetConfig {
    fn default() -> Self {
        PresetConfig {
            sex_var: "sex".into(),
            black_var: "black".into(),
            male_level: None,
            black_yes_level: None,
            error_priors: None,
            reporting_priors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationConfig {
    Table1(Table1Options),
    Scenario(Box<SimScenario>),
}

/// A finished imputation run to analyze.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRef {
    pub label: String,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<SchemaSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<DataFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_prone: Option<DataFile>,
    /// Posterior file written by `estimate-gold`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PathBuf>,
    #[serde(default)]
    pub augment: AugmentMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation_draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSource>,
    #[serde(default)]
    pub preset_options: PresetConfig,
    #[serde(default)]
    pub gibbs: GibbsConfig,
    /// Name recorded with the imputations; defaults to the model name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimands: Vec<EstimandSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunRef>,
    /// Run the coverage diagnostic against the posterior in `analyze`.
    #[serde(default)]
    pub coverage: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Overrides `gibbs.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
}

/// Values given on the command line; each one wins over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub imputations: Option<usize>,
    pub burn_in: Option<usize>,
    pub preset: Option<String>,
    pub label: Option<String>,
    pub allow_overparameterized: bool,
}

/// A config with overrides applied, plus the directory its relative paths
/// are resolved against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base: PathBuf,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl LoadedConfig {
    /// Reads `path` (or starts from an empty config in the working directory)
    /// and applies `ov`.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        let (config, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let cfg = RunConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (cfg, base)
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        Ok(Self::from_parts(config, base, ov))
    }

    pub fn from_parts(mut config: RunConfig, base: PathBuf, ov: &Overrides) -> Self {
        if let Some(s) = ov.seed {
            config.seed = Some(s);
        }
        if let Some(s) = config.seed {
            config.gibbs.seed = s;
        }
        if let Some(n) = ov.iterations {
            config.gibbs.iterations = n;
        }
        if let Some(n) = ov.imputations {
            config.gibbs.imputations = n;
        }
        if let Some(n) = ov.burn_in {
            config.gibbs.burn_in = Some(n);
        }
        if ov.allow_overparameterized {
            config.gibbs.allow_overparameterized = true;
        }
        if let Some(p) = &ov.preset {
            config.model = Some(ModelSource::Preset(p.clone()));
        }
        if let Some(l) = &ov.label {
            config.label = Some(l.clone());
        }
        let out = match &ov.out {
            Some(o) => Some(o.clone()),
            None => config.output.as_ref().map(|o| base.join(o)),
        };
        config.output = None;
        LoadedConfig { config, base, out }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory; pass --out or set `output`".into()))
    }

    pub fn seed(&self) -> u64 {
        self.config.gibbs.seed
    }

    pub fn augmentation_draws(&self) -> usize {
        self.config.augmentation_draws.unwrap_or(DEFAULT_AUGMENTATION_DRAWS)
    }

    pub fn schema(&self) -> Result<Schema, CliError> {
        let schema = match &self.config.schema {
            Some(SchemaSource::Inline(s)) => s.clone(),
            Some(SchemaSource::File(p)) => {
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => return Err(CliError::Config("`schema` is required".into())),
        };
        schema.validate().map_err(mefuse_core::Error::from)?;
        Ok(schema)
    }

    pub fn require<'a, T>(&self, field: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        field.as_ref().ok_or_else(|| CliError::Config(format!("`{name}` is required for this command")))
    }
}
