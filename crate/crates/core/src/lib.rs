//! Multi-template evidential classification over embedding spaces.
//!
//! A [`TemplateBank`] holds M learnable templates over frozen class
//! anchors. Training combines a Dirichlet cross-entropy with a
//! cross-template decoupling loss and an anchor consistency loss;
//! inference turns each template's similarities into a Dirichlet opinion
//! and fuses the opinions with the reduced Dempster rule.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evidence;
pub mod experiment;
pub mod numerics;
pub mod objectives;
pub mod report;
pub mod template;
pub mod trainer;

pub use data::{EmbeddingDataset, Sample, ScmConfig, Split};
pub use error::{Error, Result};
pub use evidence::{DirichletOpinion, EvidenceVector, FusedPrediction, StrengthMode};
pub use numerics::{FeatureVector, ProbabilityVector, Rng};
pub use objectives::{ClassifierLoss, GradientBundle, LossBreakdown, ObjectiveConfig};
pub use template::{AugmentationChannel, TemplateBank};
pub use trainer::{EvalReport, FusionRule, TrainConfig, TrainingHistory};
