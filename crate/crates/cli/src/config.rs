//! Run configuration files and flag resolution.
//!
//! Precedence for every value: flag, then config file, then default. Seeds
//! additionally fall back to `CDC_SEED` before the default.

use std::path::{Path, PathBuf};

use cdc_core::{ScmConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

pub const SEED_ENV: &str = "CDC_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub scm: ScmConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

/// A parsed file plus which seed keys it set explicitly.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub file: RunConfigFile,
    pub scm_seed_set: bool,
    pub train_seed_set: bool,
}

fn has_key(table: &toml::Table, section: &str, key: &str) -> bool {
    table
        .get(section)
        .and_then(|s| s.as_table())
        .is_some_and(|s| s.contains_key(key))
}

pub fn parse_config(text: &str, origin: &Path) -> Result<LoadedConfig, CliError> {
    let usage = |e: &dyn std::fmt::Display| CliError::usage(format!("{}: {e}", origin.display()));
    let table: toml::Table = toml::from_str(text).map_err(|e| usage(&e))?;
    let scm_seed_set = has_key(&table, "scm", "seed");
    let train_seed_set = has_key(&table, "train", "seed");
    let file: RunConfigFile = table.try_into().map_err(|e| usage(&e))?;
    Ok(LoadedConfig {
        file,
        scm_seed_set,
        train_seed_set,
    })
}

pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    let Some(path) = path else {
        return Ok(LoadedConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    parse_config(&text, path)
}

/// Seed from the flag, the file, then `CDC_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file_value: u64, file_set: bool) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if file_set {
        return Ok(file_value);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}
