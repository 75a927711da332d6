//! Learnable template bank and the embedding-space augmentation channels
//! paired with each template during training.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, FeatureVector, Rng, MIN_NORM};

/// M learnable parameter vectors over frozen class anchors.
///
/// Template m embeds class c as `normalize(anchor_c + P theta_m)`, with `P`
/// a fixed d x p projection. The offset is shared by every class of a
/// template.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    dim: usize,
    params: usize,
    anchors: Vec<FeatureVector>,
    /// Row-major d x p.
    projection: Vec<f64>,
    theta: Vec<Vec<f64>>,
}

/// Rows `w_c^m` of every template for a list of classes.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub classes: Vec<usize>,
    /// `rows[m][k]` is the unit embedding of class `classes[k]` under template m.
    pub rows: Vec<Vec<FeatureVector>>,
    /// Norm of `anchor + offset` before normalization.
    pub(crate) norms: Vec<Vec<f64>>,
}

impl Materialized {
    pub fn templates(&self) -> usize {
        self.rows.len()
    }
}

impl TemplateBank {
    /// Draws a projection with N(0, 1/d) entries and theta with
    /// N(0, init_scale^2) entries, both from `seed`.
    pub fn initialize(
        anchors: Vec<FeatureVector>,
        templates: usize,
        params: usize,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if templates == 0 {
            return Err(Error::InvalidConfig(
                "template count must be at least 1".into(),
            ));
        }
        if params == 0 {
            return Err(Error::InvalidConfig(
                "parameter count must be at least 1".into(),
            ));
        }
        let dim = check_anchors(&anchors)?;
        let mut rng = Rng::derive(seed, &[0x7072_6f6a]);
        let scale = 1.0 / (dim as f64).sqrt();
        let projection = (0..dim * params).map(|_| scale * rng.gaussian()).collect();
        let theta = (0..templates)
            .map(|m| {
                let mut r = Rng::derive(seed, &[0x7468_6574, m as u64]);
                (0..params).map(|_| init_scale * r.gaussian()).collect()
            })
            .collect();
        Ok(TemplateBank {
            dim,
            params,
            anchors,
            projection,
            theta,
        })
    }

    /// Reassembles a bank from stored parts (checkpoint loading, tests).
    pub fn from_parts(
        anchors: Vec<FeatureVector>,
        projection: Vec<f64>,
        theta: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = check_anchors(&anchors)?;
        let params = theta.first().map(Vec::len).unwrap_or(0);
        if theta.is_empty() || params == 0 {
            return Err(Error::InvalidConfig(
                "bank needs at least one nonempty template".into(),
            ));
        }
        if theta.iter().any(|t| t.len() != params) {
            return Err(Error::CheckpointMismatch(
                "ragged template parameters".into(),
            ));
        }
        if projection.len() != dim * params {
            return Err(Error::DimensionMismatch {
                expected: dim * params,
                found: projection.len(),
            });
        }
        Ok(TemplateBank {
            dim,
            params,
            anchors,
            projection,
            theta,
        })
    }

    pub fn templates(&self) -> usize {
        self.theta.len()
    }

    pub fn classes(&self) -> usize {
        self.anchors.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> usize {
        self.params
    }

    pub fn anchors(&self) -> &[FeatureVector] {
        &self.anchors
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.theta
    }

    /// Shared offset `P theta_m` of template m.
    pub fn offset(&self, m: usize) -> Vec<f64> {
        let theta = &self.theta[m];
        self.projection
            .chunks_exact(self.params)
            .map(|row| dot(row, theta))
            .collect()
    }

    /// Materializes every class.
    pub fn materialize(&self) -> Result<Materialized> {
        let all: Vec<usize> = (0..self.classes()).collect();
        self.materialize_classes(&all)
    }

    pub fn materialize_classes(&self, classes: &[usize]) -> Result<Materialized> {
        let mut rows = Vec::with_capacity(self.templates());
        let mut norms = Vec::with_capacity(self.templates());
        for m in 0..self.templates() {
            let offset = self.offset(m);
            let mut template_rows = Vec::with_capacity(classes.len());
            let mut template_norms = Vec::with_capacity(classes.len());
            for &c in classes {
                let anchor = self.anchors.get(c).ok_or(Error::UnknownClass(c))?;
                let mut z: Vec<f64> = anchor.iter().zip(&offset).map(|(a, o)| a + o).collect();
                let n = norm(&z);
                if !(n > MIN_NORM) {
                    return Err(Error::ZeroVector { norm: n });
                }
                z.iter_mut().for_each(|x| *x /= n);
                template_rows.push(FeatureVector::new(z));
                template_norms.push(n);
            }
            rows.push(template_rows);
            norms.push(template_norms);
        }
        Ok(Materialized {
            classes: classes.to_vec(),
            rows,
            norms,
        })
    }

    /// Nudges every template parameter by N(0, 1e-6^2); used when an offset
    /// cancels an anchor exactly.
    pub fn rejitter(&mut self, rng: &mut Rng) {
        for theta in &mut self.theta {
            theta.iter_mut().for_each(|t| *t += 1e-6 * rng.gaussian());
        }
    }

    /// Back-propagates row gradients `d L / d w` (indexed like
    /// `materialized.rows`) to per-template parameter gradients.
    pub(crate) fn backprop(
        &self,
        mat: &Materialized,
        row_grads: &[Vec<Vec<f64>>],
    ) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.params]; self.templates()];
        let mut offset_grad = vec![0.0; self.dim];
        for m in 0..self.templates() {
            offset_grad.iter_mut().for_each(|g| *g = 0.0);
            for (k, g) in row_grads[m].iter().enumerate() {
                let w = &mat.rows[m][k];
                let n = mat.norms[m][k];
                let radial = dot(w, g);
                for ((og, gi), wi) in offset_grad.iter_mut().zip(g).zip(w.iter()) {
                    *og += (gi - radial * wi) / n;
                }
            }
            // theta gradient = P^T offset_grad
            for (row, og) in self.projection.chunks_exact(self.params).zip(&offset_grad) {
                for (t, p) in out[m].iter_mut().zip(row) {
                    *t += p * og;
                }
            }
        }
        out
    }
}

fn check_anchors(anchors: &[FeatureVector]) -> Result<usize> {
    let dim = anchors
        .first()
        .map(FeatureVector::dim)
        .ok_or_else(|| Error::InvalidConfig("bank needs at least one class anchor".into()))?;
    if dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "embedding dimension {dim} < 2"
        )));
    }
    for a in anchors {
        if a.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: a.dim(),
            });
        }
        if (a.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("anchors must be unit-norm".into()));
        }
    }
    Ok(dim)
}

/// Embedding-space augmentation applied to the image view seen by one
/// template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AugmentationChannel {
    Identity,
    /// Additive N(0, sigma^2) noise per coordinate.
    GaussianJitter {
        sigma: f64,
    },
    /// Zeroes each coordinate independently with probability `rate`.
    CoordinateMask {
        rate: f64,
    },
    /// Rotates `planes` random coordinate planes by angles drawn uniformly
    /// from [-angle, angle] radians.
    SubspaceRotation {
        angle: f64,
        planes: usize,
    },
    /// Multiplies each coordinate by a factor in [1 - range, 1 + range].
    ScaleJitter {
        range: f64,
    },
}

impl AugmentationChannel {
    /// Output is unit-norm. A channel that would zero the vector returns
    /// the input unchanged.
    pub fn apply(&self, x: &FeatureVector, rng: &mut Rng) -> FeatureVector {
        let mut out = x.as_slice().to_vec();
        match *self {
            AugmentationChannel::Identity => return x.clone(),
            AugmentationChannel::GaussianJitter { sigma } => {
                if sigma == 0.0 {
                    return x.clone();
                }
                out.iter_mut().for_each(|v| *v += sigma * rng.gaussian());
            }
            AugmentationChannel::CoordinateMask { rate } => {
                for v in &mut out {
                    if rng.next_f64() < rate {
                        *v = 0.0;
                    }
                }
            }
            AugmentationChannel::SubspaceRotation { angle, planes } => {
                let d = out.len();
                for _ in 0..planes {
                    let i = rng.index(d);
                    let mut j = rng.index(d - 1);
                    if j >= i {
                        j += 1;
                    }
                    let (s, c) = rng.uniform(-angle, angle).sin_cos();
                    let (a, b) = (out[i], out[j]);
                    out[i] = c * a - s * b;
                    out[j] = s * a + c * b;
                }
            }
            AugmentationChannel::ScaleJitter { range } => {
                for v in &mut out {
                    *v *= rng.uniform(1.0 - range, 1.0 + range);
                }
            }
        }
        FeatureVector::unit(out).unwrap_or_else(|_| x.clone())
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, AugmentationChannel::Identity)
    }

    /// Cycles through the four non-identity channel kinds.
    pub fn default_cycle(templates: usize) -> Vec<AugmentationChannel> {
        const CYCLE: [AugmentationChannel; 4] = [
            AugmentationChannel::GaussianJitter { sigma: 0.05 },
            AugmentationChannel::CoordinateMask { rate: 0.1 },
            AugmentationChannel::SubspaceRotation {
                angle: 0.3,
                planes: 8,
            },
            AugmentationChannel::ScaleJitter { range: 0.2 },
        ];
        (0..templates).map(|m| CYCLE[m % CYCLE.len()]).collect()
    }
}

impl fmt::Display for AugmentationChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentationChannel::Identity => write!(f, "identity"),
            AugmentationChannel::GaussianJitter { sigma } => write!(f, "jitter:{sigma}"),
            AugmentationChannel::CoordinateMask { rate } => write!(f, "mask:{rate}"),
            AugmentationChannel::SubspaceRotation { angle, planes } => {
                write!(f, "rotate:{angle}:{planes}")
            }
            AugmentationChannel::ScaleJitter { range } => write!(f, "scale:{range}"),
        }
    }
}

impl From<AugmentationChannel> for String {
    fn from(ch: AugmentationChannel) -> String {
        ch.to_string()
    }
}

impl TryFrom<String> for AugmentationChannel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for AugmentationChannel {
    type Err = Error;

    /// Parses `identity`, `jitter:<sigma>`, `mask:<rate>`,
    /// `rotate:<angle>:<planes>` or `scale:<range>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad augmentation channel {s:?}"));
        let mut parts = s.trim().split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let mut real = |lo: f64, hi: f64| -> Result<f64> {
            let v: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if (lo..=hi).contains(&v) {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        let ch = match kind {
            "identity" => AugmentationChannel::Identity,
            "jitter" => AugmentationChannel::GaussianJitter {
                sigma: real(0.0, f64::MAX)?,
            },
            "mask" => AugmentationChannel::CoordinateMask {
                rate: real(0.0, 1.0)?,
            },
            "scale" => AugmentationChannel::ScaleJitter {
                range: real(0.0, 1.0)?,
            },
            "rotate" => {
                let angle = real(0.0, std::f64::consts::PI)?;
                let planes = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                AugmentationChannel::SubspaceRotation { angle, planes }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(ch)
    }
}
