//! Fixtures shared by the benchmarks.

use cdc_core::evidence::{evidence_from_similarity, opinion_from_evidence};
use cdc_core::numerics::Rng;
use cdc_core::objectives::{Batch, BatchSample, ClassifierLoss, ObjectiveConfig};
use cdc_core::{DirichletOpinion, FeatureVector, TemplateBank};

pub fn random_unit(rng: &mut Rng, d: usize) -> FeatureVector {
    FeatureVector::unit((0..d).map(|_| rng.gaussian()).collect()).expect("nonzero draw")
}

/// `templates` opinions over `classes` built from random cosine similarities.
pub fn opinions(templates: usize, classes: usize, seed: u64) -> Vec<DirichletOpinion> {
    let mut rng = Rng::seed_from(seed);
    (0..templates)
        .map(|m| {
            let sims: Vec<f64> = (0..classes).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let e = evidence_from_similarity(&sims, 0.1, 1e6, m).expect("valid tau and clamp");
            opinion_from_evidence(&e)
        })
        .collect()
}

/// A bank with its base classes and one minibatch drawn around the anchors.
pub struct Problem {
    pub bank: TemplateBank,
    pub batch: Batch,
    pub cfg: ObjectiveConfig,
}

pub fn problem(
    dim: usize,
    classes: usize,
    templates: usize,
    params: usize,
    batch: usize,
) -> Problem {
    let mut rng = Rng::seed_from(11);
    let anchors: Vec<_> = (0..classes).map(|_| random_unit(&mut rng, dim)).collect();
    let bank = TemplateBank::initialize(anchors, templates, params, 0.1, 11).expect("valid bank");
    let samples = (0..batch)
        .map(|_| BatchSample {
            views: (0..templates).map(|_| random_unit(&mut rng, dim)).collect(),
            label: rng.index(classes),
        })
        .collect();
    Problem {
        bank,
        batch: Batch {
            classes: (0..classes).collect(),
            samples,
        },
        cfg: ObjectiveConfig {
            tau: 0.05,
            clamp: 1e6,
            beta: 1.0,
            gamma: 1.0,
            classifier: ClassifierLoss::TrustedCrossEntropy,
        },
    }
}
