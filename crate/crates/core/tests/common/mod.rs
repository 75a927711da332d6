#![allow(dead_code)]

use cdc_core::numerics::Rng;
use cdc_core::objectives::{self, Batch, BatchSample, ClassifierLoss, ObjectiveConfig};
use cdc_core::{FeatureVector, TemplateBank};

pub fn random_unit(rng: &mut Rng, d: usize) -> FeatureVector {
    FeatureVector::unit((0..d).map(|_| rng.gaussian()).collect()).unwrap()
}

/// Random small problem: d <= 16, C <= 5, M <= 3.
pub struct Instance {
    pub bank: TemplateBank,
    pub batch: Batch,
    pub cfg: ObjectiveConfig,
}

pub fn random_instance(seed: u64, classifier: ClassifierLoss) -> Instance {
    let mut rng = Rng::seed_from(seed);
    let d = 4 + rng.index(13);
    let classes = 2 + rng.index(4);
    let templates = 1 + rng.index(3);
    let params = 2 + rng.index(6);
    let anchors: Vec<_> = (0..classes).map(|_| random_unit(&mut rng, d)).collect();
    let bank =
        TemplateBank::initialize(anchors, templates, params, rng.uniform(0.1, 0.8), seed).unwrap();
    let active = classes.max(2);
    let samples = (0..1 + rng.index(4))
        .map(|_| BatchSample {
            views: (0..templates).map(|_| random_unit(&mut rng, d)).collect(),
            label: rng.index(active),
        })
        .collect();
    let cfg = ObjectiveConfig {
        tau: rng.uniform(0.2, 1.0),
        clamp: 1e12,
        beta: rng.uniform(0.0, 5.0),
        gamma: rng.uniform(0.0, 1.0),
        classifier,
    };
    Instance {
        bank,
        batch: Batch {
            classes: (0..active).collect(),
            samples,
        },
        cfg,
    }
}

/// Central finite differences of `f` with respect to every theta coordinate.
pub fn finite_difference(
    bank: &TemplateBank,
    step: f64,
    f: impl Fn(&TemplateBank) -> f64,
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for m in 0..bank.templates() {
        let mut row = Vec::new();
        for i in 0..bank.params() {
            let mut plus = bank.clone();
            plus.theta_mut()[m][i] += step;
            let mut minus = bank.clone();
            minus.theta_mut()[m][i] -= step;
            row.push((f(&plus) - f(&minus)) / (2.0 * step));
        }
        out.push(row);
    }
    out
}

/// Worst per-coordinate relative error, with a 1e-8 floor on the scale so
/// coordinates whose true gradient is ~0 compare in absolute terms.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub fn term(bank: &TemplateBank, inst: &Instance, which: &str) -> f64 {
    let l = objectives::loss(bank, &inst.batch, &inst.cfg).unwrap();
    match which {
        "tce" => l.trusted_ce,
        "de" => l.decoupling,
        "con" => l.consistency,
        _ => l.total,
    }
}
