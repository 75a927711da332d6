//! Seeded train-and-evaluate runs, ablation rows and parameter sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{generate_scm_dataset, EmbeddingDataset, ScmConfig};
use crate::error::{Error, Result};
use crate::objectives::{cross_template_entropy, mean_cross_template_similarity, ClassifierLoss};
use crate::template::{AugmentationChannel, TemplateBank};
use crate::trainer::{evaluate, train, EvalReport, FusionRule, TrainConfig, TrainingHistory};

/// Inputs of a benchmark run: how to generate data and how to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub scm: ScmConfig,
    pub train: TrainConfig,
}

impl Benchmark {
    /// Same configuration with both generator and trainer reseeded.
    pub fn with_seed(&self, seed: u64) -> Benchmark {
        let mut b = self.clone();
        b.scm.seed = seed;
        b.train.seed = seed;
        b
    }
}

/// Desk-scale base-to-new benchmark: 64-d embeddings, 5 base and 5 new
/// classes, 16 shots.
///
/// The temperature is 0.05 rather than the training default 0.01: with
/// exponential evidence, 0.01 saturates the evidence clamp for any
/// similarity above ~0.14, which typical positives exceed.
pub fn desk_benchmark() -> Benchmark {
    Benchmark {
        scm: ScmConfig::default(),
        train: TrainConfig {
            tau: 0.05,
            ..TrainConfig::default()
        },
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub bank: TemplateBank,
    pub history: TrainingHistory,
    pub eval: EvalReport,
    pub similarity: SimilaritySummary,
}

/// Cross-template statistics of the trained class embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    /// Mean cosine between the same class under two different templates.
    pub mean_same_class: f64,
    /// Mean entropy of cross-template predictions, in nats.
    pub cross_template_entropy: f64,
    /// `cross_template_entropy / ln C`.
    pub normalized_entropy: f64,
}

pub fn similarity_summary(
    bank: &TemplateBank,
    classes: &[usize],
    tau: f64,
) -> Result<SimilaritySummary> {
    let mat = bank.materialize_classes(classes)?;
    let h = cross_template_entropy(&mat, tau);
    let max = (classes.len().max(2) as f64).ln();
    Ok(SimilaritySummary {
        mean_same_class: mean_cross_template_similarity(&mat),
        cross_template_entropy: h,
        normalized_entropy: h / max,
    })
}

pub fn run(dataset: &EmbeddingDataset, config: &TrainConfig) -> Result<RunOutcome> {
    let (bank, history) = train(dataset, config)?;
    let eval = evaluate(dataset, &bank, config)?;
    let similarity =
        similarity_summary(&bank, &(0..bank.classes()).collect::<Vec<_>>(), config.tau)?;
    Ok(RunOutcome {
        bank,
        history,
        eval,
        similarity,
    })
}

/// Generates the benchmark dataset for its seed, then trains and evaluates.
pub fn run_benchmark(benchmark: &Benchmark) -> Result<RunOutcome> {
    let ds = generate_scm_dataset(&benchmark.scm)?;
    run(&ds, &benchmark.train)
}

/// Component toggles of the ablation table (all rows use the configured M).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Plain cross-entropy per template, predictions averaged.
    None,
    /// Evidential fusion with the Dirichlet cross-entropy.
    Dstc,
    /// Evidential fusion plus per-template augmentation channels.
    DstcImage,
    /// Evidential fusion plus the decoupling and consistency losses.
    DstcText,
    /// Everything enabled.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::Dstc,
        Ablation::DstcImage,
        Ablation::DstcText,
        Ablation::Full,
    ];

    /// Derives the row's config from a fully enabled one.
    pub fn configure(self, full: &TrainConfig) -> TrainConfig {
        let dstc = !matches!(self, Ablation::None);
        let image = matches!(self, Ablation::DstcImage | Ablation::Full);
        let text = matches!(self, Ablation::DstcText | Ablation::Full);
        TrainConfig {
            classifier: if dstc {
                ClassifierLoss::TrustedCrossEntropy
            } else {
                ClassifierLoss::CrossEntropy
            },
            fusion: if dstc {
                FusionRule::Evidential
            } else {
                FusionRule::MeanSoftmax
            },
            beta: if text { full.beta } else { 0.0 },
            gamma: if text { full.gamma } else { 0.0 },
            channels: if image {
                full.channels.clone()
            } else {
                Vec::new()
            },
            ..full.clone()
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Dstc => "dstc",
            Ablation::DstcImage => "dstc+image",
            Ablation::DstcText => "dstc+text",
            Ablation::Full => "full",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation row {s:?}")))
    }
}

/// Sweep axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    M,
    Beta,
    Gamma,
    Channels,
    Ablation,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" | "M" => Ok(SweepAxis::M),
            "beta" => Ok(SweepAxis::Beta),
            "gamma" => Ok(SweepAxis::Gamma),
            "channels" => Ok(SweepAxis::Channels),
            "ablation" => Ok(SweepAxis::Ablation),
            _ => Err(Error::InvalidConfig(format!("unknown sweep axis {s:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::M => "m",
            SweepAxis::Beta => "beta",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Channels => "channels",
            SweepAxis::Ablation => "ablation",
        })
    }
}

/// Applies one sweep value to a config. Channel values are `+`-separated
/// channel lists, e.g. `identity+jitter:0.05`.
pub fn apply_sweep_value(axis: SweepAxis, value: &str, base: &TrainConfig) -> Result<TrainConfig> {
    let real = || {
        value
            .parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("{axis} value {value:?} is not a number")))
    };
    let mut cfg = base.clone();
    match axis {
        SweepAxis::M => {
            cfg.templates = value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("m value {value:?} is not a count")))?;
        }
        SweepAxis::Beta => cfg.beta = real()?,
        SweepAxis::Gamma => cfg.gamma = real()?,
        SweepAxis::Channels => {
            cfg.channels = value
                .split('+')
                .map(str::parse::<AugmentationChannel>)
                .collect::<Result<_>>()?;
        }
        SweepAxis::Ablation => cfg = value.parse::<Ablation>()?.configure(base),
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Aggregate of one sweep setting over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub seeds: Vec<u64>,
    pub base: f64,
    pub new: f64,
    pub harmonic_mean: f64,
    pub mean_uncertainty: f64,
    pub per_seed_new: Vec<f64>,
    pub wall_seconds: f64,
}

/// Where a sweep gets its data for each seed.
#[derive(Debug, Clone, Copy)]
pub enum SweepData<'a> {
    /// A fresh dataset generated with the seed.
    Generated(&'a ScmConfig),
    /// The same dataset for every seed; only training is reseeded.
    Fixed(&'a EmbeddingDataset),
}

/// Runs one setting for every seed and averages the evaluations.
pub fn sweep_setting(
    data: SweepData<'_>,
    config: &TrainConfig,
    axis: SweepAxis,
    value: &str,
    seeds: &[u64],
) -> Result<SweepRow> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let start = std::time::Instant::now();
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let train = TrainConfig {
            seed,
            ..config.clone()
        };
        let eval = match data {
            SweepData::Generated(scm) => {
                let ds = generate_scm_dataset(&ScmConfig { seed, ..*scm })?;
                run(&ds, &train)?.eval
            }
            SweepData::Fixed(ds) => run(ds, &train)?.eval,
        };
        reports.push(eval);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(SweepRow {
        axis,
        value: value.to_owned(),
        seeds: seeds.to_vec(),
        base: mean(|r| r.base_accuracy),
        new: mean(|r| r.new_accuracy),
        harmonic_mean: mean(|r| r.harmonic_mean),
        mean_uncertainty: mean(|r| r.mean_uncertainty),
        per_seed_new: reports.iter().map(|r| r.new_accuracy).collect(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn sweep(
    data: SweepData<'_>,
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one value".into(),
        ));
    }
    values
        .iter()
        .map(|v| {
            let cfg = apply_sweep_value(axis, v, base)?;
            sweep_setting(data, &cfg, axis, v, seeds)
        })
        .collect()
}
