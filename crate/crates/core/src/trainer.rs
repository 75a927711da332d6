//! Training (SGD over template parameters) and fused inference.

use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingDataset, Sample, Split};
use crate::error::{Error, Result};
use crate::evidence::{
    evidence_value, fuse_sequence, opinion_from_raw, FusedPrediction, StrengthMode, DEFAULT_CLAMP,
};
use crate::numerics::{argmax, dot, softmax_raw, FeatureVector, ProbabilityVector, Rng};
use crate::objectives::{
    gradients, Batch, BatchSample, ClassifierLoss, LossBreakdown, ObjectiveConfig,
};
use crate::template::{AugmentationChannel, Materialized, TemplateBank};

/// How per-template predictions are combined at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionRule {
    /// Dirichlet opinions fused with the reduced Dempster rule.
    #[default]
    Evidential,
    /// Arithmetic mean of per-template softmax probabilities.
    MeanSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of templates M.
    pub templates: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    pub clamp: f64,
    pub seed: u64,
    /// Length p of each template's parameter vector.
    pub params: usize,
    /// Standard deviation of the random theta initialization.
    pub init_scale: f64,
    /// Channel of template m is `channels[m % len]`; empty means identity.
    pub channels: Vec<AugmentationChannel>,
    pub classifier: ClassifierLoss,
    pub fusion: FusionRule,
    pub strength: StrengthMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            templates: 4,
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.035,
            tau: 0.01,
            beta: 5.0,
            gamma: 0.01,
            clamp: DEFAULT_CLAMP,
            seed: 0,
            params: 16,
            init_scale: 0.02,
            channels: AugmentationChannel::default_cycle(4),
            classifier: ClassifierLoss::TrustedCrossEntropy,
            fusion: FusionRule::Evidential,
            strength: StrengthMode::Dirichlet,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            tau: self.tau,
            clamp: self.clamp,
            beta: self.beta,
            gamma: self.gamma,
            classifier: self.classifier,
        }
    }

    pub fn channel(&self, m: usize) -> AugmentationChannel {
        if self.channels.is_empty() {
            AugmentationChannel::Identity
        } else {
            self.channels[m % self.channels.len()]
        }
    }

    /// Settings that are valid but have no effect.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.templates < 2 && self.beta != 0.0 {
            out.push(format!(
                "decoupling term is inactive with a single template (beta = {} has no effect)",
                self.beta
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.templates == 0 {
            return bad("templates must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.params == 0 {
            return bad("params must be at least 1".into());
        }
        if !(self.tau > 0.0) {
            return Err(Error::NonPositiveTemperature(self.tau));
        }
        if !(self.clamp > 0.0) {
            return Err(Error::NonPositiveClamp(self.clamp));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("learning_rate", self.learning_rate),
            ("init_scale", self.init_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: usize,
    /// Mean over the epoch's minibatches.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

/// Initial bank for a dataset and config, before any update.
pub fn initial_bank(dataset: &EmbeddingDataset, config: &TrainConfig) -> Result<TemplateBank> {
    TemplateBank::initialize(
        dataset.anchor_matrix()?,
        config.templates,
        config.params,
        config.init_scale,
        config.seed,
    )
}

/// Runs SGD on the base-train samples of `dataset`.
///
/// Each minibatch computes one joint gradient for every template's theta.
pub fn train(
    dataset: &EmbeddingDataset,
    config: &TrainConfig,
) -> Result<(TemplateBank, TrainingHistory)> {
    config.validate()?;
    let train_set: Vec<&Sample> = dataset.split(Split::BaseTrain).collect();
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut classes: Vec<usize> = train_set.iter().map(|s| s.class).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut bank = initial_bank(dataset, config)?;
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        warnings: config.warnings(),
    };
    let objective = config.objective();
    let mut jitter_rng = Rng::derive(config.seed, &[0x6a69_7474]);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::derive(config.seed, &[0x6570_6f63, epoch as u64]).shuffle(&mut order);

        let mut sum = LossBreakdown::default();
        let mut iterations = 0;
        for (iteration, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = Batch {
                classes: classes.clone(),
                samples: chunk
                    .iter()
                    .map(|&i| augmented_sample(train_set[i], i, epoch, config))
                    .collect(),
            };
            let step = match gradients(&bank, &batch, &objective) {
                Err(Error::ZeroVector { .. }) => {
                    bank.rejitter(&mut jitter_rng);
                    history.warnings.push(format!(
                        "epoch {epoch}, iteration {iteration}: degenerate template row, theta re-jittered"
                    ));
                    gradients(&bank, &batch, &objective)
                }
                other => other,
            };
            let (loss, grad) = step.map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, iteration },
                other => other,
            })?;
            for (theta, g) in bank.theta_mut().iter_mut().zip(&grad.per_template) {
                for (t, gi) in theta.iter_mut().zip(g) {
                    *t -= config.learning_rate * gi;
                }
            }
            sum.trusted_ce += loss.trusted_ce;
            sum.decoupling += loss.decoupling;
            sum.consistency += loss.consistency;
            sum.total += loss.total;
            iterations += 1;
        }
        let n = iterations as f64;
        history.epochs.push(EpochRecord {
            epoch,
            iterations,
            loss: LossBreakdown {
                trusted_ce: sum.trusted_ce / n,
                decoupling: sum.decoupling / n,
                consistency: sum.consistency / n,
                total: sum.total / n,
                beta: config.beta,
                gamma: config.gamma,
            },
        });
    }
    Ok((bank, history))
}

fn augmented_sample(
    sample: &Sample,
    index: usize,
    epoch: usize,
    config: &TrainConfig,
) -> BatchSample {
    let views = (0..config.templates)
        .map(|m| {
            let mut rng = Rng::derive(
                config.seed,
                &[0x6175_676d, epoch as u64, index as u64, m as u64],
            );
            config.channel(m).apply(&sample.features, &mut rng)
        })
        .collect();
    BatchSample {
        views,
        label: sample.class,
    }
}

/// Per-template similarities `w_c^m . x` for the materialized classes.
pub fn template_similarities(x: &[f64], mat: &Materialized) -> Vec<Vec<f64>> {
    mat.rows
        .iter()
        .map(|rows| rows.iter().map(|w| dot(w, x)).collect())
        .collect()
}

/// Evidential prediction over the classes of `mat` (test-time views are
/// the raw feature for every template).
pub fn predict_materialized(
    x: &[f64],
    mat: &Materialized,
    config: &TrainConfig,
) -> Result<FusedPrediction> {
    if mat.rows.first().and_then(|r| r.first()).map(|w| w.dim()) != Some(x.len()) {
        return Err(Error::DimensionMismatch {
            expected: mat
                .rows
                .first()
                .and_then(|r| r.first())
                .map_or(0, |w| w.dim()),
            found: x.len(),
        });
    }
    let opinions: Vec<_> = template_similarities(x, mat)
        .iter()
        .map(|sims| {
            let e: Vec<f64> = sims
                .iter()
                .map(|s| evidence_value(*s, config.tau, config.clamp))
                .collect();
            opinion_from_raw(&e, config.strength)
        })
        .collect();
    fuse_sequence(&opinions)
}

/// Fused prediction over every class of the bank.
pub fn predict(
    x: &FeatureVector,
    bank: &TemplateBank,
    config: &TrainConfig,
) -> Result<FusedPrediction> {
    predict_materialized(x, &bank.materialize()?, config)
}

/// Mean of per-template softmax probabilities.
pub fn predict_mean_softmax(x: &[f64], mat: &Materialized, tau: f64) -> ProbabilityVector {
    let sims = template_similarities(x, mat);
    let classes = mat.classes.len();
    let mut mean = vec![0.0; classes];
    for s in &sims {
        for (acc, p) in mean.iter_mut().zip(softmax_raw(s, tau)) {
            *acc += p / sims.len() as f64;
        }
    }
    ProbabilityVector::from_raw(mean)
}

/// `2 b n / (b + n)`, or 0 when either accuracy is 0.
pub fn harmonic_mean(base: f64, new: f64) -> f64 {
    if base <= 0.0 || new <= 0.0 {
        return 0.0;
    }
    2.0 / (1.0 / base + 1.0 / new)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PartitionScores {
    pub base: f64,
    pub new: f64,
    pub harmonic_mean: f64,
}

impl PartitionScores {
    pub fn new(base: f64, new: f64) -> Self {
        PartitionScores {
            base,
            new,
            harmonic_mean: harmonic_mean(base, new),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accuracies in percent; base classes are scored among base classes,
    /// new classes among new classes.
    pub base_accuracy: f64,
    pub new_accuracy: f64,
    pub harmonic_mean: f64,
    /// Harmonic mean of each template used on its own.
    pub per_template_accuracy: Vec<f64>,
    pub per_template: Vec<PartitionScores>,
    pub mean_uncertainty: f64,
    pub vacuous_count: usize,
    pub conflict_count: usize,
    pub base_samples: usize,
    pub new_samples: usize,
}

struct PartitionTally {
    fused_correct: usize,
    solo_correct: Vec<usize>,
    evaluated: usize,
}

fn tally_partition(
    samples: &[&Sample],
    mat: &Materialized,
    config: &TrainConfig,
    uncertainty: &mut f64,
    vacuous: &mut usize,
    conflicts: &mut usize,
) -> Result<PartitionTally> {
    let mut t = PartitionTally {
        fused_correct: 0,
        solo_correct: vec![0; mat.templates()],
        evaluated: 0,
    };
    for s in samples {
        let truth = mat
            .classes
            .iter()
            .position(|&c| c == s.class)
            .ok_or(Error::UnknownClass(s.class))?;
        let fused = match predict_materialized(&s.features, mat, config) {
            Ok(f) => f,
            Err(Error::TotalConflict { .. }) => {
                *conflicts += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        t.evaluated += 1;
        *uncertainty += fused.uncertainty;
        if fused.vacuous {
            *vacuous += 1;
        }
        let predicted = match config.fusion {
            FusionRule::Evidential => fused.predicted_class(),
            FusionRule::MeanSoftmax => predict_mean_softmax(&s.features, mat, config.tau).argmax(),
        };
        if predicted == truth {
            t.fused_correct += 1;
        }
        // A solo template's Dirichlet probabilities are e_c / sum(e).
        for (m, sims) in template_similarities(&s.features, mat).iter().enumerate() {
            let e: Vec<f64> = sims
                .iter()
                .map(|x| evidence_value(*x, config.tau, config.clamp))
                .collect();
            if argmax(&e) == truth {
                t.solo_correct[m] += 1;
            }
        }
    }
    Ok(t)
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Base-to-new evaluation on the base-test and new-test splits.
pub fn evaluate(
    dataset: &EmbeddingDataset,
    bank: &TemplateBank,
    config: &TrainConfig,
) -> Result<EvalReport> {
    if dataset.dim != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: dataset.dim,
        });
    }
    if dataset.classes() != bank.classes() {
        return Err(Error::ClassCountMismatch(bank.classes(), dataset.classes()));
    }
    let base_test: Vec<&Sample> = dataset.split(Split::BaseTest).collect();
    let new_test: Vec<&Sample> = dataset.split(Split::NewTest).collect();
    if base_test.is_empty() {
        return Err(Error::EmptyPartition("base-test"));
    }
    if new_test.is_empty() {
        return Err(Error::EmptyPartition("new-test"));
    }
    let base_mat = bank.materialize_classes(&dataset.base_classes())?;
    let new_mat = bank.materialize_classes(&dataset.new_classes())?;

    let mut uncertainty = 0.0;
    let mut vacuous = 0;
    let mut conflicts = 0;
    let base = tally_partition(
        &base_test,
        &base_mat,
        config,
        &mut uncertainty,
        &mut vacuous,
        &mut conflicts,
    )?;
    let new = tally_partition(
        &new_test,
        &new_mat,
        config,
        &mut uncertainty,
        &mut vacuous,
        &mut conflicts,
    )?;

    let base_accuracy = percent(base.fused_correct, base.evaluated);
    let new_accuracy = percent(new.fused_correct, new.evaluated);
    let per_template: Vec<PartitionScores> = (0..bank.templates())
        .map(|m| {
            PartitionScores::new(
                percent(base.solo_correct[m], base.evaluated),
                percent(new.solo_correct[m], new.evaluated),
            )
        })
        .collect();
    let evaluated = base.evaluated + new.evaluated;
    Ok(EvalReport {
        base_accuracy,
        new_accuracy,
        harmonic_mean: harmonic_mean(base_accuracy, new_accuracy),
        per_template_accuracy: per_template.iter().map(|s| s.harmonic_mean).collect(),
        per_template,
        mean_uncertainty: if evaluated == 0 {
            0.0
        } else {
            uncertainty / evaluated as f64
        },
        vacuous_count: vacuous,
        conflict_count: conflicts,
        base_samples: base.evaluated,
        new_samples: new.evaluated,
    })
}
