//! Run configuration: one TOML file describing the dataset, the format
//! corpus, a set of named backends, the sweep grid, and output paths.
//!
//! Input paths (dataset manifest, corpus, fixture traces) resolve
//! relative to the config file so a run directory is self-contained;
//! output paths resolve relative to the working directory so artifacts
//! land where the tool is invoked. The HTTP API key is never read from
//! the config file: it comes from the `CTXCAL_API_KEY` environment
//! variable, and a key in the file is rejected outright.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ctxcal_core::backend::{
    FixtureBackend, HttpBackend, HttpBackendConfig, LmBackend, MockBackend, MockLmConfig,
};
use ctxcal_core::harness::SweepAxes;
use ctxcal_core::prompt::{builtin_corpus, load_format_corpus, CorpusFormat};
use serde::Deserialize;

use crate::CliError;

/// Environment variable holding the HTTP API key.
pub const API_KEY_VAR: &str = "CTXCAL_API_KEY";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    /// Name of the backend to use when `--backend` is not given.
    pub backend: String,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub corpus: Option<CorpusSection>,
    pub backends: BTreeMap<String, BackendSection>,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Dataset manifest (JSON), relative to the config file.
    pub manifest: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Format corpus (JSONL), relative to the config file. Absent, the
    /// builtin corpus is used.
    pub path: PathBuf,
}

/// One named backend. `kind` selects the variant; the remaining keys are
/// that backend's own configuration.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSection {
    Mock {
        #[serde(flatten)]
        config: MockLmConfig,
    },
    Http {
        #[serde(flatten)]
        config: HttpBackendConfig,
    },
    Fixture {
        /// Recorded trace (JSONL), relative to the config file.
        path: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Cap on planned cells; exceeding it fails before any backend call.
    #[serde(default)]
    pub budget: Option<usize>,
    pub axes: SweepAxes,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Run records file (JSONL), relative to the working directory.
    pub records: PathBuf,
    /// Summary CSV; defaults to the records path with a .csv extension.
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

/// A parsed config plus the directory its relative input paths resolve
/// against.
pub struct LoadedConfig {
    pub config: RunConfig,
    base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("parsing {}: {e}", path.display())))?;
        let base_dir = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        Ok(Self { config, base_dir })
    }

    /// An input path from the config, resolved against the config file's
    /// directory.
    pub fn input_path(&self, relative: &Path) -> PathBuf {
        if relative.is_absolute() {
            relative.to_path_buf()
        } else {
            self.base_dir.join(relative)
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.input_path(&self.config.dataset.manifest)
    }

    pub fn corpus(&self) -> Result<Vec<CorpusFormat>, CliError> {
        match &self.config.corpus {
            Some(section) => {
                let path = self.input_path(&section.path);
                load_format_corpus(&path)
                    .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
            }
            None => Ok(builtin_corpus()),
        }
    }

    /// Resolves a backend selection to its config section without
    /// instantiating it, so a dry run can reject a bad name while
    /// needing neither credentials nor fixture files.
    pub fn backend_section(&self, selection: Option<&str>) -> Result<&BackendSection, CliError> {
        let name = selection.unwrap_or(&self.config.backend);
        self.config.backends.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.config.backends.keys().map(String::as_str).collect();
            CliError::usage(format!(
                "unknown backend `{name}`; the config defines: {}",
                known.join(", ")
            ))
        })
    }

    /// Instantiates the selected backend. `selection` (from `--backend`)
    /// overrides the config's default.
    pub fn backend(&self, selection: Option<&str>) -> Result<Box<dyn LmBackend>, CliError> {
        let name = selection.unwrap_or(&self.config.backend);
        let section = self.backend_section(selection)?;
        match section {
            BackendSection::Mock { config } => MockBackend::with_id(config.clone(), name)
                .map(|b| Box::new(b) as Box<dyn LmBackend>)
                .map_err(|e| CliError::validation(format!("backend `{name}`: {e}"))),
            BackendSection::Http { config } => {
                if config.api_key.is_some() {
                    return Err(CliError::usage(format!(
                        "backend `{name}` sets api_key in the config file; \
                         put the key in {API_KEY_VAR} instead"
                    )));
                }
                let mut config = config.clone();
                config.api_key = std::env::var(API_KEY_VAR).ok();
                HttpBackend::new(config)
                    .map(|b| Box::new(b) as Box<dyn LmBackend>)
                    .map_err(|e| CliError::backend(format!("backend `{name}`: {e}")))
            }
            BackendSection::Fixture { path } => {
                let path = self.input_path(path);
                FixtureBackend::load(&path)
                    .map(|b| Box::new(b) as Box<dyn LmBackend>)
                    .map_err(|e| CliError::validation(format!("fixture {}: {e}", path.display())))
            }
        }
    }
}
