//! Training objectives over a template bank and their analytic gradients.
//!
//! Three terms are combined as `classifier + beta * decoupling + gamma *
//! consistency`:
//!
//! * classifier: the Dirichlet (trusted) cross-entropy
//!   `sum_m psi(S_m) - psi(alpha_{m,y})`, averaged over the batch, or plain
//!   softmax cross-entropy for the averaging baseline;
//! * decoupling: mean of `sum P log P` where `P` classifies template m's
//!   class rows with template m' (m != m'), minimized when those
//!   predictions are uniform;
//! * consistency: `-(1/C) sum_m sum_c log P(c | w_c^m, anchors)`.
//!
//! Gradients are propagated by hand through softmax / digamma, the cosine
//! (dot product of unit rows), and row normalization down to theta.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{evidence_value, EvidenceVector};
use crate::numerics::{
    cosine_sim, digamma, digamma_unchecked, dot, softmax, softmax_raw, trigamma_unchecked,
    FeatureVector, ProbabilityVector,
};
use crate::template::{Materialized, TemplateBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierLoss {
    /// Dirichlet expected cross-entropy over per-template evidence.
    #[default]
    TrustedCrossEntropy,
    /// Softmax cross-entropy summed over templates.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub tau: f64,
    pub clamp: f64,
    pub beta: f64,
    pub gamma: f64,
    pub classifier: ClassifierLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Classification term (trusted or plain cross-entropy).
    pub trusted_ce: f64,
    pub decoupling: f64,
    pub consistency: f64,
    pub total: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Per-template parameter gradients, shaped like the bank's theta.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub per_template: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.per_template.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.per_template
            .iter()
            .flatten()
            .fold(0.0, |acc, g| acc.max(g.abs()))
    }
}

/// Gradients of each loss term separately, plus the weighted total.
#[derive(Debug, Clone)]
pub struct TermGradients {
    pub trusted_ce: GradientBundle,
    pub decoupling: GradientBundle,
    pub consistency: GradientBundle,
    pub total: GradientBundle,
}

/// One training sample as seen by every template.
#[derive(Debug, Clone)]
pub struct BatchSample {
    /// `views[m]` is the (augmented) feature given to template m.
    pub views: Vec<FeatureVector>,
    /// Class index in the bank.
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Bank class indices the losses range over.
    pub classes: Vec<usize>,
    pub samples: Vec<BatchSample>,
}

impl Batch {
    fn label_position(&self, label: usize) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == label)
            .ok_or(Error::UnknownClass(label))
    }
}

/// Softmax over cosine similarities between `query` and each row of `rows`.
pub fn cross_template_classify(
    query: &[f64],
    rows: &[FeatureVector],
    tau: f64,
) -> Result<ProbabilityVector> {
    let sims = rows
        .iter()
        .map(|r| cosine_sim(query, r))
        .collect::<Result<Vec<_>>>()?;
    softmax(&sims, tau)
}

/// Decoupling loss over `banks[m][c]`, normalized by M(M-1)C.
pub fn decoupling_loss(banks: &[Vec<FeatureVector>], tau: f64) -> Result<f64> {
    if banks.len() < 2 {
        return Err(Error::TooFewTemplates(banks.len()));
    }
    check_tau(tau)?;
    Ok(decoupling_term(banks, tau, None, 1.0))
}

pub fn consistency_loss(
    banks: &[Vec<FeatureVector>],
    anchors: &[FeatureVector],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    for rows in banks {
        if rows.len() != anchors.len() {
            return Err(Error::ClassCountMismatch(rows.len(), anchors.len()));
        }
    }
    Ok(consistency_term(banks, anchors, tau, None, 1.0))
}

/// `sum_m psi(S_m) - psi(e_{m,y} + 1)` with `S_m = sum_c (e_{m,c} + 1)`.
pub fn trusted_ce(evidences: &[EvidenceVector], y: usize) -> Result<f64> {
    let mut loss = 0.0;
    for e in evidences {
        let ey = *e.evidence.get(y).ok_or(Error::UnknownClass(y))?;
        let strength: f64 = e.evidence.iter().map(|x| x + 1.0).sum();
        loss += digamma(strength)? - digamma(ey + 1.0)?;
    }
    Ok(loss)
}

pub fn total_loss(
    trusted_ce: f64,
    decoupling: f64,
    consistency: f64,
    beta: f64,
    gamma: f64,
) -> LossBreakdown {
    LossBreakdown {
        trusted_ce,
        decoupling,
        consistency,
        total: trusted_ce + beta * decoupling + gamma * consistency,
        beta,
        gamma,
    }
}

/// Forward pass of the combined objective.
pub fn loss(bank: &TemplateBank, batch: &Batch, cfg: &ObjectiveConfig) -> Result<LossBreakdown> {
    let mat = bank.materialize_classes(&batch.classes)?;
    let anchors = active_anchors(bank, &batch.classes);
    let ce = classifier_term(&mat.rows, batch, cfg, None, 1.0)?;
    let de = if mat.templates() >= 2 {
        decoupling_term(&mat.rows, cfg.tau, None, 1.0)
    } else {
        0.0
    };
    let con = consistency_term(&mat.rows, &anchors, cfg.tau, None, 1.0);
    finite(total_loss(ce, de, con, cfg.beta, cfg.gamma))
}

/// Loss and the gradient of the weighted total with respect to theta.
pub fn gradients(
    bank: &TemplateBank,
    batch: &Batch,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, GradientBundle)> {
    check_tau(cfg.tau)?;
    let mat = bank.materialize_classes(&batch.classes)?;
    let anchors = active_anchors(bank, &batch.classes);
    let mut grads = zero_row_grads(&mat, bank.dim());
    let ce = classifier_term(&mat.rows, batch, cfg, Some(&mut grads), 1.0)?;
    let de = if mat.templates() >= 2 {
        decoupling_term(&mat.rows, cfg.tau, Some(&mut grads), cfg.beta)
    } else {
        0.0
    };
    let con = consistency_term(&mat.rows, &anchors, cfg.tau, Some(&mut grads), cfg.gamma);
    let breakdown = finite(total_loss(ce, de, con, cfg.beta, cfg.gamma))?;
    let bundle = GradientBundle {
        per_template: bank.backprop(&mat, &grads),
    };
    if !bundle.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            iteration: 0,
        });
    }
    Ok((breakdown, bundle))
}

/// Gradients of each term on its own (unweighted) and of the total.
pub fn term_gradients(
    bank: &TemplateBank,
    batch: &Batch,
    cfg: &ObjectiveConfig,
) -> Result<TermGradients> {
    check_tau(cfg.tau)?;
    let mat = bank.materialize_classes(&batch.classes)?;
    let anchors = active_anchors(bank, &batch.classes);

    let mut g_ce = zero_row_grads(&mat, bank.dim());
    classifier_term(&mat.rows, batch, cfg, Some(&mut g_ce), 1.0)?;
    let mut g_de = zero_row_grads(&mat, bank.dim());
    if mat.templates() >= 2 {
        decoupling_term(&mat.rows, cfg.tau, Some(&mut g_de), 1.0);
    }
    let mut g_con = zero_row_grads(&mat, bank.dim());
    consistency_term(&mat.rows, &anchors, cfg.tau, Some(&mut g_con), 1.0);

    let bundle = |g: &RowGrads| GradientBundle {
        per_template: bank.backprop(&mat, g),
    };
    let trusted_ce = bundle(&g_ce);
    let decoupling = bundle(&g_de);
    let consistency = bundle(&g_con);
    let total = GradientBundle {
        per_template: (0..bank.templates())
            .map(|m| {
                (0..bank.params())
                    .map(|i| {
                        trusted_ce.per_template[m][i]
                            + cfg.beta * decoupling.per_template[m][i]
                            + cfg.gamma * consistency.per_template[m][i]
                    })
                    .collect()
            })
            .collect(),
    };
    Ok(TermGradients {
        trusted_ce,
        decoupling,
        consistency,
        total,
    })
}

/// Mean entropy of the cross-template predictions `P(. | w_c^m, W^m')`
/// over all ordered pairs m != m' and classes.
pub fn cross_template_entropy(mat: &Materialized, tau: f64) -> f64 {
    let m_count = mat.templates();
    let c_count = mat.classes.len();
    if m_count < 2 || c_count == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut logits = vec![0.0; c_count];
    for m in 0..m_count {
        for other in (0..m_count).filter(|&o| o != m) {
            for row in &mat.rows[m] {
                for (l, w) in logits.iter_mut().zip(&mat.rows[other]) {
                    *l = dot(row, w);
                }
                total += crate::numerics::entropy_raw(&softmax_raw(&logits, tau));
            }
        }
    }
    total / (m_count * (m_count - 1) * c_count) as f64
}

/// Mean cosine similarity between the same class under two different
/// templates.
pub fn mean_cross_template_similarity(mat: &Materialized) -> f64 {
    let m_count = mat.templates();
    if m_count < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for m in 0..m_count {
        for other in (m + 1)..m_count {
            for (a, b) in mat.rows[m].iter().zip(&mat.rows[other]) {
                total += dot(a, b);
                n += 1;
            }
        }
    }
    total / n as f64
}

type RowGrads = Vec<Vec<Vec<f64>>>;

fn zero_row_grads(mat: &Materialized, dim: usize) -> RowGrads {
    mat.rows
        .iter()
        .map(|rows| vec![vec![0.0; dim]; rows.len()])
        .collect()
}

fn active_anchors(bank: &TemplateBank, classes: &[usize]) -> Vec<FeatureVector> {
    classes.iter().map(|&c| bank.anchors()[c].clone()).collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(tau))
    }
}

fn finite(b: LossBreakdown) -> Result<LossBreakdown> {
    if b.total.is_finite()
        && b.trusted_ce.is_finite()
        && b.decoupling.is_finite()
        && b.consistency.is_finite()
    {
        Ok(b)
    } else {
        Err(Error::NonFiniteLoss {
            epoch: 0,
            iteration: 0,
        })
    }
}

fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

/// Log-sum-exp of `logits / tau`.
fn log_partition(logits: &[f64], tau: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max / tau
        + logits
            .iter()
            .map(|l| ((l - max) / tau).exp())
            .sum::<f64>()
            .ln()
}

fn classifier_term(
    rows: &[Vec<FeatureVector>],
    batch: &Batch,
    cfg: &ObjectiveConfig,
    mut grads: Option<&mut RowGrads>,
    weight: f64,
) -> Result<f64> {
    if batch.samples.is_empty() {
        return Ok(0.0);
    }
    let classes = batch.classes.len();
    let scale = weight / batch.samples.len() as f64;
    let mut loss = 0.0;
    let mut sims = vec![0.0; classes];
    let mut coef = vec![0.0; classes];
    for sample in &batch.samples {
        let y = batch.label_position(sample.label)?;
        if sample.views.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: sample.views.len(),
            });
        }
        for (m, (template_rows, view)) in rows.iter().zip(&sample.views).enumerate() {
            for (s, w) in sims.iter_mut().zip(template_rows) {
                *s = dot(w, view);
            }
            match cfg.classifier {
                ClassifierLoss::TrustedCrossEntropy => {
                    let mut strength = classes as f64;
                    for (k, s) in sims.iter().enumerate() {
                        coef[k] = evidence_value(*s, cfg.tau, cfg.clamp);
                        strength += coef[k];
                    }
                    let alpha_y = coef[y] + 1.0;
                    loss += digamma_unchecked(strength) - digamma_unchecked(alpha_y);
                    if grads.is_some() {
                        let d_strength = trigamma_unchecked(strength);
                        let d_alpha_y = trigamma_unchecked(alpha_y);
                        for k in 0..classes {
                            let e = coef[k];
                            let clamped = (sims[k] / cfg.tau).exp() >= cfg.clamp;
                            let de_ds = if clamped { 0.0 } else { e / cfg.tau };
                            let dl_de = d_strength - if k == y { d_alpha_y } else { 0.0 };
                            coef[k] = dl_de * de_ds;
                        }
                    }
                }
                ClassifierLoss::CrossEntropy => {
                    loss += log_partition(&sims, cfg.tau) - sims[y] / cfg.tau;
                    if grads.is_some() {
                        let p = softmax_raw(&sims, cfg.tau);
                        for k in 0..classes {
                            coef[k] = (p[k] - if k == y { 1.0 } else { 0.0 }) / cfg.tau;
                        }
                    }
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                for k in 0..classes {
                    axpy(&mut g[m][k], scale * coef[k], view);
                }
            }
        }
    }
    Ok(loss / batch.samples.len() as f64)
}

fn decoupling_term(
    rows: &[Vec<FeatureVector>],
    tau: f64,
    mut grads: Option<&mut RowGrads>,
    weight: f64,
) -> f64 {
    let m_count = rows.len();
    let classes = rows[0].len();
    let norm = (m_count * (m_count - 1) * classes) as f64;
    let mut total = 0.0;
    let mut logits = vec![0.0; classes];
    for m in 0..m_count {
        for other in (0..m_count).filter(|&o| o != m) {
            for (k, query) in rows[m].iter().enumerate() {
                for (l, w) in logits.iter_mut().zip(&rows[other]) {
                    *l = dot(query, w);
                }
                let p = softmax_raw(&logits, tau);
                let plogp: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum();
                total += plogp;
                if let Some(g) = grads.as_deref_mut() {
                    // d(sum P log P)/d logit_j = P_j (log P_j - sum P log P) / tau
                    for (j, &pj) in p.iter().enumerate() {
                        if pj == 0.0 {
                            continue;
                        }
                        let c = weight * pj * (pj.ln() - plogp) / (tau * norm);
                        let (left, right) = if m < other {
                            let (a, b) = g.split_at_mut(other);
                            (&mut a[m], &mut b[0])
                        } else {
                            let (a, b) = g.split_at_mut(m);
                            (&mut b[0], &mut a[other])
                        };
                        axpy(&mut left[k], c, &rows[other][j]);
                        axpy(&mut right[j], c, query);
                    }
                }
            }
        }
    }
    total / norm
}

fn consistency_term(
    rows: &[Vec<FeatureVector>],
    anchors: &[FeatureVector],
    tau: f64,
    mut grads: Option<&mut RowGrads>,
    weight: f64,
) -> f64 {
    let classes = anchors.len();
    let mut total = 0.0;
    let mut logits = vec![0.0; classes];
    for (m, template_rows) in rows.iter().enumerate() {
        for (k, w) in template_rows.iter().enumerate() {
            for (l, a) in logits.iter_mut().zip(anchors) {
                *l = dot(w, a);
            }
            total += log_partition(&logits, tau) - logits[k] / tau;
            if let Some(g) = grads.as_deref_mut() {
                let p = softmax_raw(&logits, tau);
                for (j, a) in anchors.iter().enumerate() {
                    let c =
                        weight * (p[j] - if j == k { 1.0 } else { 0.0 }) / (tau * classes as f64);
                    axpy(&mut g[m][k], c, a);
                }
            }
        }
    }
    total / classes as f64
}
