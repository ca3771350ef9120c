//! Experiment files.
//!
//! ```toml
//! [federation]            # one-to-one with FederationConfig
//! strategy = "fed_rot"
//! n_clients = 3
//! rank = 4
//! rounds = 50
//! local_steps = 10
//! learning_rate = 0.1
//! lambda = 0.6
//!
//! [federation.task]
//! kind = "low_rank_regression"
//! d_out = 64
//! d_in = 64
//! true_rank = 4
//! heterogeneity = 0.5
//!
//! [sweep]                 # optional; used by `fedrot sweep`
//! lambda = [0.0, 0.5, 1.0]
//! seeds = [0, 1, 2]
//!
//! [output]                # optional; `--out` wins
//! dir = "results/lambda"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use fedrot::{FederationConfig, SweepGrid};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub federation: FederationConfig,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

/// Why a config could not be loaded. All variants map to exit status 2.
#[derive(Debug)]
pub enum ConfigError {
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Read { path, source } => write!(f, "cannot read {}: {source}", path.display()),
            ConfigError::Parse {
                path,
                line,
                column,
                message,
            } => write!(f, "{}:{line}:{column}: {message}", path.display()),
            ConfigError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

pub fn parse(text: &str, path: &Path) -> Result<ExperimentFile, ConfigError> {
    let file: ExperimentFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    file.federation
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(file)
}

pub fn load(path: &Path) -> Result<ExperimentFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, path)
}
