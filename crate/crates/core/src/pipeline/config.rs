use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::EndpointConfig;
use crate::reconstruct::ReconstructionConfig;

/// Environment variable naming the config file used when none is given explicitly.
pub const CONFIG_ENV: &str = "TRIMKIT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
    /// `plain` or `jsonl`; inferred from the extension when absent.
    pub format: Option<String>,
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    /// Saved n-gram model.
    pub model: Option<PathBuf>,
    pub order: usize,
    pub smoothing_k: f64,
    /// Masked-LM service used for ranking instead of the n-gram model.
    pub external_url: Option<String>,
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            model: None,
            order: 3,
            smoothing_k: 0.01,
            external_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferabilitySection {
    pub window: usize,
    pub min_occurrences: usize,
    pub step: usize,
}

impl Default for InferabilitySection {
    fn default() -> Self {
        InferabilitySection {
            window: crate::inferability::DEFAULT_WINDOW,
            min_occurrences: crate::inferability::DEFAULT_MIN_OCCURRENCES,
            step: crate::inferability::DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    pub url: String,
    #[serde(default)]
    pub auth_header: Option<String>,
    #[serde(default)]
    pub auth_value: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_concurrency() -> usize {
    4
}

impl EndpointSection {
    pub fn endpoint_config(&self) -> EndpointConfig {
        EndpointConfig {
            url: self.url.clone(),
            auth_header: self.auth_header.clone(),
            auth_value: self.auth_value.clone(),
            timeout_secs: self.timeout_secs,
            retries: self.retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingSection {
    /// JSON pricing file; inline prices below override its values.
    pub file: Option<PathBuf>,
    pub gen_input_price: Option<f64>,
    pub gen_output_price: Option<f64>,
    pub recon_input_price: Option<f64>,
    pub recon_output_price: Option<f64>,
    pub words_to_tokens: f64,
}

impl Default for PricingSection {
    fn default() -> Self {
        PricingSection {
            file: None,
            gen_input_price: None,
            gen_output_price: None,
            recon_input_price: None,
            recon_output_price: None,
            words_to_tokens: 1.0,
        }
    }
}

/// Settings shared by every subcommand, read from a TOML file.
///
/// ```toml
/// lexicon = "extended"
/// terms = "level5.txt"
/// workers = 4
///
/// [corpus]
/// path = "wiki.jsonl"
///
/// [scorer]
/// model = "model.json"
/// order = 3
/// smoothing_k = 0.01
///
/// [reconstruction]
/// beam_width = 8
/// max_consecutive_insertions = 2
/// insertion_penalty = 0.5
///
/// [endpoint]
/// url = "https://llm.example/generate"
/// auth_header = "Authorization"
/// auth_value = "Bearer ..."
///
/// [pricing]
/// file = "gpt4o.json"
/// words_to_tokens = 1.3
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Builtin lexicon name or lexicon file used for ranking and counting.
    pub lexicon: Option<String>,
    /// Term set to distill with and reconstruct from.
    pub terms: Option<String>,
    pub workers: Option<usize>,
    pub corpus: CorpusSection,
    pub scorer: ScorerSection,
    pub inferability: InferabilitySection,
    pub reconstruction: ReconstructionConfig,
    pub endpoint: Option<EndpointSection>,
    pub pricing: PricingSection,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Loads `explicit`, else the file named by the environment variable, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(PathBuf::from(p)),
                _ => Ok(Config::default()),
            },
        }
    }
}
