//! Dirichlet opinions built from per-template evidence and their fusion
//! with the reduced Dempster combination rule.
//!
//! Each template m yields nonnegative evidence `e_c`, Dirichlet parameters
//! `alpha_c = e_c + 1`, and an opinion with beliefs `b_c = e_c / S` and
//! uncertainty `u = C / S` where `S = sum(alpha_c)`. Opinions from all
//! templates are folded left to right; the fused beliefs, renormalized,
//! are the class probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ProbabilityVector;

/// Evidence clamp used when none is configured.
pub const DEFAULT_CLAMP: f64 = 1e6;

/// Residual `1 - K` below which two opinions are treated as totally
/// conflicting.
pub const CONFLICT_FLOOR: f64 = 1e-12;

/// Tolerance on `sum(b) + u = 1` accepted by [`fuse_pair`].
pub const MASS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceVector {
    pub evidence: Vec<f64>,
    pub template_index: usize,
}

impl EvidenceVector {
    pub fn new(evidence: Vec<f64>, template_index: usize) -> Self {
        debug_assert!(evidence.iter().all(|e| *e >= 0.0 && e.is_finite()));
        EvidenceVector {
            evidence,
            template_index,
        }
    }

    pub fn classes(&self) -> usize {
        self.evidence.len()
    }
}

/// How the Dirichlet strength is computed from evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrengthMode {
    /// `S = sum(e) + C`, so beliefs and uncertainty sum to one.
    #[default]
    Dirichlet,
    /// `S = sum(e) + 1`. Masses do not sum to one for C > 1; kept only
    /// for side-by-side comparison and rejected by the fusion rule.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletOpinion {
    pub beliefs: Vec<f64>,
    pub uncertainty: f64,
    /// Total Dirichlet strength. For fused opinions this is the equivalent
    /// strength `C / u` (infinite for a dogmatic opinion).
    pub strength: f64,
}

impl DirichletOpinion {
    /// Zero-evidence opinion: all mass on uncertainty.
    pub fn vacuous(classes: usize) -> Self {
        DirichletOpinion {
            beliefs: vec![0.0; classes],
            uncertainty: 1.0,
            strength: classes as f64,
        }
    }

    pub fn classes(&self) -> usize {
        self.beliefs.len()
    }

    pub fn mass(&self) -> f64 {
        self.beliefs.iter().sum::<f64>() + self.uncertainty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub beliefs: Vec<f64>,
    pub uncertainty: f64,
    pub probabilities: ProbabilityVector,
    pub fused_count: usize,
    /// Set when every belief is zero and the probabilities fell back to uniform.
    pub vacuous: bool,
}

impl FusedPrediction {
    pub fn predicted_class(&self) -> usize {
        self.probabilities.argmax()
    }
}

/// Maps similarities to evidence `min(exp(sim / tau), clamp)`.
pub fn evidence_from_similarity(
    sims: &[f64],
    tau: f64,
    clamp: f64,
    template_index: usize,
) -> Result<EvidenceVector> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if !(clamp > 0.0) {
        return Err(Error::NonPositiveClamp(clamp));
    }
    let evidence = sims
        .iter()
        .map(|s| evidence_value(*s, tau, clamp))
        .collect();
    Ok(EvidenceVector {
        evidence,
        template_index,
    })
}

#[inline]
pub(crate) fn evidence_value(sim: f64, tau: f64, clamp: f64) -> f64 {
    (sim / tau).exp().min(clamp)
}

pub fn opinion_from_evidence(e: &EvidenceVector) -> DirichletOpinion {
    opinion_from_evidence_with(e, StrengthMode::Dirichlet)
}

pub fn opinion_from_evidence_with(e: &EvidenceVector, mode: StrengthMode) -> DirichletOpinion {
    opinion_from_raw(&e.evidence, mode)
}

pub(crate) fn opinion_from_raw(evidence: &[f64], mode: StrengthMode) -> DirichletOpinion {
    let classes = evidence.len() as f64;
    let total: f64 = evidence.iter().sum();
    let strength = match mode {
        StrengthMode::Dirichlet => total + classes,
        StrengthMode::Literal => total + 1.0,
    };
    DirichletOpinion {
        beliefs: evidence.iter().map(|e| e / strength).collect(),
        uncertainty: classes / strength,
        strength: total + classes,
    }
}

/// Reduced Dempster combination of two opinions over the same classes.
pub fn fuse_pair(a: &DirichletOpinion, b: &DirichletOpinion) -> Result<DirichletOpinion> {
    fuse_pair_at(a, b, 1)
}

fn fuse_pair_at(
    a: &DirichletOpinion,
    b: &DirichletOpinion,
    index: usize,
) -> Result<DirichletOpinion> {
    if a.classes() != b.classes() {
        return Err(Error::ClassCountMismatch(a.classes(), b.classes()));
    }
    for o in [a, b] {
        let mass = o.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidSimplex { sum: mass });
        }
    }

    // 1 - K, with K = sum_{i != j} a_i b_j. On the simplex this equals the
    // total unnormalized fused mass, which is a sum of nonnegative terms
    // and so avoids the cancellation in 1 - K when K is near 1.
    let sum_a: f64 = a.beliefs.iter().sum();
    let sum_b: f64 = b.beliefs.iter().sum();
    let agree: f64 = a.beliefs.iter().zip(&b.beliefs).map(|(x, y)| x * y).sum();
    let residual =
        agree + sum_a * b.uncertainty + sum_b * a.uncertainty + a.uncertainty * b.uncertainty;
    if residual < CONFLICT_FLOOR {
        return Err(Error::TotalConflict { index, residual });
    }

    let beliefs = a
        .beliefs
        .iter()
        .zip(&b.beliefs)
        .map(|(x, y)| (x * y + x * b.uncertainty + y * a.uncertainty) / residual)
        .collect();
    let uncertainty = a.uncertainty * b.uncertainty / residual;
    let strength = if uncertainty > 0.0 {
        a.classes() as f64 / uncertainty
    } else {
        f64::INFINITY
    };
    Ok(DirichletOpinion {
        beliefs,
        uncertainty,
        strength,
    })
}

/// Left fold of [`fuse_pair`] in list order, then renormalized beliefs.
pub fn fuse_sequence(opinions: &[DirichletOpinion]) -> Result<FusedPrediction> {
    let (first, rest) = opinions.split_first().ok_or(Error::NoOpinions)?;
    let mut acc = first.clone();
    for (offset, o) in rest.iter().enumerate() {
        acc = fuse_pair_at(&acc, o, offset + 1)?;
    }
    let (probabilities, vacuous) = frontdoor_probabilities(&acc.beliefs);
    Ok(FusedPrediction {
        beliefs: acc.beliefs,
        uncertainty: acc.uncertainty,
        probabilities,
        fused_count: opinions.len(),
        vacuous,
    })
}

/// Class probabilities from fused beliefs, `B_c / sum(B)`.
///
/// Returns uniform probabilities and `true` when all beliefs are zero.
pub fn frontdoor_probabilities(beliefs: &[f64]) -> (ProbabilityVector, bool) {
    let total: f64 = beliefs.iter().sum();
    if !(total > 0.0) {
        return (ProbabilityVector::uniform(beliefs.len()), true);
    }
    (
        ProbabilityVector::from_raw(beliefs.iter().map(|b| b / total).collect()),
        false,
    )
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn opinion(beliefs: &[f64], u: f64) -> DirichletOpinion {
        DirichletOpinion {
            beliefs: beliefs.to_vec(),
            uncertainty: u,
            strength: beliefs.len() as f64 / u,
        }
    }

    #[test]
    fn evidence_examples() {
        let e = evidence_from_similarity(&[0.0], 1.0, DEFAULT_CLAMP, 0).unwrap();
        assert_eq!(e.evidence, vec![1.0]);
        let e = evidence_from_similarity(&[1.0], 0.5, DEFAULT_CLAMP, 0).unwrap();
        assert_abs_diff_eq!(e.evidence[0], 2f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(e.evidence[0], 7.389, epsilon = 1e-3);
        let e = evidence_from_similarity(&[1.0], 0.01, 1e6, 0).unwrap();
        assert_eq!(e.evidence, vec![1e6]);
        assert!(matches!(
            evidence_from_similarity(&[1.0], 0.0, 1e6, 0),
            Err(Error::NonPositiveTemperature(_))
        ));
        // strictly positive even at the most negative similarity
        let e = evidence_from_similarity(&[-1.0], 0.01, 1e6, 0).unwrap();
        assert!(e.evidence[0] > 0.0);
    }

    #[test]
    fn opinion_examples() {
        let o = opinion_from_evidence(&EvidenceVector::new(vec![0.0; 3], 0));
        assert_eq!(o.beliefs, vec![0.0; 3]);
        assert_eq!(o.uncertainty, 1.0);
        assert_eq!(o, DirichletOpinion::vacuous(3));

        let o = opinion_from_evidence(&EvidenceVector::new(vec![2.0, 0.0], 0));
        assert_eq!(o.beliefs, vec![0.5, 0.0]);
        assert_eq!(o.uncertainty, 0.5);
        assert_eq!(o.strength, 4.0);

        let o = opinion_from_evidence(&EvidenceVector::new(vec![3.0; 3], 0));
        assert_eq!(o.beliefs, vec![0.25; 3]);
        assert_eq!(o.uncertainty, 0.25);
        assert_eq!(o.strength, 12.0);
    }

    #[test]
    fn literal_strength_breaks_mass() {
        let e = EvidenceVector::new(vec![3.0; 3], 0);
        let lit = opinion_from_evidence_with(&e, StrengthMode::Literal);
        // S = 9 + 1 = 10: beliefs 0.3 each and u = 0.3
        assert_abs_diff_eq!(lit.mass(), 1.2, epsilon = 1e-12);
        let fixed = opinion_from_evidence(&e);
        assert!(matches!(
            fuse_pair(&lit, &fixed),
            Err(Error::InvalidSimplex { .. })
        ));
    }

    #[test]
    fn fuse_pair_examples() {
        let o = opinion(&[0.6, 0.2], 0.2);
        let fused = fuse_pair(&o, &DirichletOpinion::vacuous(2)).unwrap();
        for (x, y) in fused.beliefs.iter().zip(&o.beliefs) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(fused.uncertainty, 0.2, epsilon = 1e-12);

        let fused = fuse_pair(&o, &opinion(&[0.3, 0.3], 0.4)).unwrap();
        // K = 0.6*0.3 + 0.2*0.3 = 0.24
        assert_abs_diff_eq!(fused.beliefs[0], 0.48 / 0.76, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.beliefs[1], 0.20 / 0.76, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.uncertainty, 0.08 / 0.76, epsilon = 1e-12);
        assert_abs_diff_eq!(fused.mass(), 1.0, epsilon = 1e-12);

        let certain = opinion(&[1.0, 0.0], 0.0);
        let fused = fuse_pair(&certain, &certain).unwrap();
        assert_eq!(fused.beliefs, vec![1.0, 0.0]);
        assert_eq!(fused.uncertainty, 0.0);
    }

    #[test]
    fn contradictory_certainty_is_total_conflict() {
        let a = opinion(&[1.0, 0.0], 0.0);
        let b = opinion(&[0.0, 1.0], 0.0);
        assert!(matches!(
            fuse_pair(&a, &b),
            Err(Error::TotalConflict { .. })
        ));
        let ok = opinion(&[0.5, 0.5], 0.0);
        let err = fuse_sequence(&[ok.clone(), ok, a, b]).unwrap_err();
        assert!(
            matches!(err, Error::TotalConflict { index: 3, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn fuse_pair_rejects_mismatched_classes() {
        assert!(matches!(
            fuse_pair(&DirichletOpinion::vacuous(2), &DirichletOpinion::vacuous(3)),
            Err(Error::ClassCountMismatch(2, 3))
        ));
    }

    #[test]
    fn fuse_sequence_examples() {
        let o = opinion_from_evidence(&EvidenceVector::new(vec![5.0, 1.0, 0.5], 0));
        let single = fuse_sequence(std::slice::from_ref(&o)).unwrap();
        assert_eq!(single.beliefs, o.beliefs);
        assert_eq!(single.uncertainty, o.uncertainty);
        assert_eq!(single.fused_count, 1);

        let vac = vec![DirichletOpinion::vacuous(4); 5];
        let fused = fuse_sequence(&vac).unwrap();
        assert_eq!(fused.beliefs, vec![0.0; 4]);
        assert_eq!(fused.uncertainty, 1.0);
        assert!(fused.vacuous);
        assert_eq!(fused.probabilities.as_slice(), &[0.25; 4]);

        assert!(matches!(fuse_sequence(&[]), Err(Error::NoOpinions)));
    }

    #[test]
    fn frontdoor_examples() {
        let (p, vac) = frontdoor_probabilities(&[0.25, 0.25, 0.25]);
        assert!(!vac);
        for x in p.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let (p, _) = frontdoor_probabilities(&[0.6, 0.2]);
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-15);
        let (p, vac) = frontdoor_probabilities(&[0.0, 0.0]);
        assert!(vac);
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn dominant_evidence_wins() {
        let mut last = 0.0;
        for scale in [1.0, 10.0, 1e3, 1e6, 1e9] {
            let opinions: Vec<_> = (0..3)
                .map(|m| opinion_from_evidence(&EvidenceVector::new(vec![scale, 2.0, 3.0], m)))
                .collect();
            let p = fuse_sequence(&opinions).unwrap().probabilities[0];
            assert!(p >= last);
            last = p;
        }
        assert!(last > 1.0 - 1e-6);
    }

    fn evidence_strategy() -> impl Strategy<Value = Vec<f64>> {
        (2usize..=10).prop_flat_map(|c| proptest::collection::vec(0.0f64..50.0, c))
    }

    proptest! {
        #[test]
        fn opinions_have_unit_mass(e in evidence_strategy()) {
            let o = opinion_from_evidence(&EvidenceVector::new(e.clone(), 0));
            prop_assert!((o.mass() - 1.0).abs() < 1e-9);
            prop_assert!(o.uncertainty > 0.0);
            prop_assert!((o.strength - e.iter().map(|x| x + 1.0).sum::<f64>()).abs() < 1e-9);
        }

        #[test]
        fn disjoint_support_lowers_uncertainty(
            c in 2usize..8,
            ea in 0.0f64..20.0,
            eb in 0.0f64..20.0,
        ) {
            // evidence on the same single class: K = 0
            let mut a = vec![0.0; c];
            let mut b = vec![0.0; c];
            a[0] = ea;
            b[0] = eb;
            let oa = opinion_from_evidence(&EvidenceVector::new(a, 0));
            let ob = opinion_from_evidence(&EvidenceVector::new(b, 1));
            let f = fuse_pair(&oa, &ob).unwrap();
            prop_assert!(f.uncertainty <= oa.uncertainty.min(ob.uncertainty) + 1e-15);
        }
    }
}
