//! Run reports serialized as TOML.
//!
//! A report embeds the resolved configuration so that the report plus the
//! dataset file reproduce the run. Nothing time-dependent is recorded.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ScmConfig;
use crate::error::{Error, Result};
use crate::experiment::{SimilaritySummary, SweepRow};
use crate::trainer::{EvalReport, TrainConfig, TrainingHistory};

pub const FORMAT: &str = "cdc-report v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRow {
    pub template: usize,
    pub channel: String,
    pub base: f64,
    pub new: f64,
    pub harmonic_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub command: String,
    pub dataset: Option<String>,
    pub checkpoint: Option<String>,
    pub notes: Vec<String>,
    pub train: TrainConfig,
    /// Present when the dataset was generated in the same run.
    pub scm: Option<ScmConfig>,
    pub history: TrainingHistory,
    pub eval: Option<EvalReport>,
    pub per_template: Vec<TemplateRow>,
    pub similarity: Option<SimilaritySummary>,
}

impl RunReport {
    pub fn new(command: &str, train: TrainConfig) -> Self {
        RunReport {
            format: FORMAT.into(),
            command: command.into(),
            dataset: None,
            checkpoint: None,
            notes: Vec::new(),
            train,
            scm: None,
            history: TrainingHistory::default(),
            eval: None,
            per_template: Vec::new(),
            similarity: None,
        }
    }

    /// Sets the evaluation and derives the per-template table from it.
    pub fn set_eval(&mut self, eval: EvalReport) {
        self.per_template = eval
            .per_template
            .iter()
            .enumerate()
            .map(|(m, s)| TemplateRow {
                template: m,
                channel: self.train.channel(m).to_string(),
                base: s.base,
                new: s.new,
                harmonic_mean: s.harmonic_mean,
            })
            .collect();
        self.eval = Some(eval);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("report parse: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub format: String,
    pub axis: String,
    pub train: TrainConfig,
    pub scm: ScmConfig,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))
    }
}
