//! Experiment config files (TOML).
//!
//! Top-level keys are exactly the [`RunConfig`] fields; `[stream]` picks the
//! task source, `[model]` the architecture, and the optional `[spectra]`
//! section drives the truncation analysis.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;
use crate::tasks::{gen_gaussian_tasks, load_csv_tasks, GaussianStreamSpec, PlantedSpectrumSpec, TaskStream};
use crate::trainer::RunConfig;

use super::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamConfig {
    Gaussian(GaussianStreamSpec),
    Csv(CsvStreamConfig),
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig::Gaussian(GaussianStreamSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvStreamConfig {
    /// One file per task, relative to the config file.
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub classes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraConfig {
    /// Truncation ranks; defaults to `1..=min(d_in, d_out)`.
    #[serde(default)]
    pub ks: Option<Vec<usize>>,
    /// Model layer to truncate when no planted construction is given.
    #[serde(default)]
    pub layer: usize,
    #[serde(default)]
    pub planted: Option<PlantedSpectrumSpec>,
    /// Minimum specific-task accuracy loss (points) at `k = general_energy_rank`.
    #[serde(default)]
    pub min_specific_drop: Option<f64>,
    /// Maximum general-task accuracy change (points) at the same `k`.
    #[serde(default)]
    pub max_general_change: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub stream: StreamConfig,
    pub model: ModelSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectra: Option<SpectraConfig>,
    /// Directory CSV paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const SECTIONS: [&str; 3] = ["stream", "model", "spectra"];

fn section<T: serde::de::DeserializeOwned>(name: &str, v: toml::Value) -> Result<T, CliError> {
    v.try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("[{name}]: {}", e.message())))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let mut take = |name: &str| table.remove(name);
        let stream = take("stream");
        let model = take("model");
        let spectra = take("spectra");
        let run: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        run.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let stream = match stream {
            Some(v) => section(SECTIONS[0], v)?,
            None => StreamConfig::default(),
        };
        let model = match model {
            Some(v) => section(SECTIONS[1], v)?,
            None => ModelSpec::default(),
        };
        let spectra = spectra.map(|v| section(SECTIONS[2], v)).transpose()?;
        Ok(Self {
            run,
            stream,
            model,
            spectra,
            base_dir: PathBuf::new(),
        })
    }

    /// Echo of the effective config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build_stream(&self) -> Result<TaskStream, CliError> {
        match &self.stream {
            StreamConfig::Gaussian(spec) => {
                gen_gaussian_tasks(self.run.seed, spec).map_err(|e| CliError::Config(format!("[stream]: {e}")))
            }
            StreamConfig::Csv(c) => {
                let files: Vec<PathBuf> = c.files.iter().map(|f| self.base_dir.join(f)).collect();
                load_csv_tasks(&files, self.run.seed, c.classes).map_err(|e| CliError::Runtime(e.to_string()))
            }
        }
    }
}
