//! Synthetic embedding datasets and the `CDCDS v1` text format.
//!
//! Generated features follow a small structural model: every class owns
//! a fixed loading on orthonormal task-relevant factor directions, every
//! sample adds loadings on task-irrelevant factors plus isotropic noise.
//! On base-class splits the irrelevant loadings are pulled toward a
//! per-class direction (a confounder correlated with the label); on the
//! new-class split they are independent of the label.
//!
//! File layout, one record per line:
//!
//! ```text
//! CDCDS v1 d=<d> C=<C>
//! <name_0>,<name_1>,...,<name_{C-1}>
//! anchor,<class>,<v_1>,...,<v_d>          (optional, one per class)
//! <split-tag>,<class>,<v_1>,...,<v_d>
//! ```
//!
//! Split tags are `base-train`, `base-test` and `new-test`; class indices
//! are zero-based; reals are written with 17 significant digits.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, FeatureVector, Rng};

const MAGIC: &str = "CDCDS v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    BaseTrain,
    BaseTest,
    NewTest,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::BaseTrain => "base-train",
            Split::BaseTest => "base-test",
            Split::NewTest => "new-test",
        }
    }

    pub fn is_base(self) -> bool {
        !matches!(self, Split::NewTest)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "base-train" => Ok(Split::BaseTrain),
            "base-test" => Ok(Split::BaseTest),
            "new-test" => Ok(Split::NewTest),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub dim: usize,
    pub class_names: Vec<String>,
    /// Frozen per-class text-side embedding, when known.
    pub anchors: Vec<Option<FeatureVector>>,
    pub samples: Vec<Sample>,
}

impl EmbeddingDataset {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Classes with at least one base-tagged sample, ascending.
    pub fn base_classes(&self) -> Vec<usize> {
        self.classes_where(|s| s.is_base())
    }

    /// Classes with at least one new-test sample, ascending.
    pub fn new_classes(&self) -> Vec<usize> {
        self.classes_where(|s| !s.is_base())
    }

    fn classes_where(&self, pred: impl Fn(Split) -> bool) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| pred(s.split))
            .map(|s| s.class)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// All anchors, or the first class lacking one.
    pub fn anchor_matrix(&self) -> Result<Vec<FeatureVector>> {
        self.anchors
            .iter()
            .enumerate()
            .map(|(c, a)| a.clone().ok_or(Error::MissingAnchor(c)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScmConfig {
    pub dim: usize,
    pub base_classes: usize,
    pub new_classes: usize,
    pub relevant: usize,
    pub irrelevant: usize,
    /// Per-coordinate standard deviation of isotropic noise.
    pub noise_sigma: f64,
    /// Overall scale of the irrelevant-factor loadings.
    pub irrelevant_scale: f64,
    /// Correlation between irrelevant loadings and class on base splits.
    pub confound: f64,
    /// Per-coordinate noise added to the relevant prototype of each anchor.
    pub anchor_noise: f64,
    pub shots: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            dim: 64,
            base_classes: 5,
            new_classes: 5,
            relevant: 16,
            irrelevant: 16,
            noise_sigma: 0.15,
            irrelevant_scale: 2.0,
            confound: 0.5,
            anchor_noise: 0.15,
            shots: 16,
            test_per_class: 200,
            seed: 0,
        }
    }
}

/// Orthonormal factor directions used by the generator.
#[derive(Debug, Clone)]
pub struct ScmFactors {
    pub relevant: Vec<Vec<f64>>,
    pub irrelevant: Vec<Vec<f64>>,
}

/// Gram–Schmidt over `count` seeded gaussian vectors in R^dim.
pub fn orthonormal_factors(dim: usize, count: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if dim < count {
        return Err(Error::DimensionTooSmall {
            dim,
            required: count,
        });
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
        // two passes keep the Gram matrix at identity to ~1e-15
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    Ok(basis)
}

pub fn scm_factors(cfg: &ScmConfig) -> Result<ScmFactors> {
    let mut rng = Rng::derive(cfg.seed, &[0x6661_6374]);
    let mut all = orthonormal_factors(cfg.dim, cfg.relevant + cfg.irrelevant, &mut rng)?;
    let irrelevant = all.split_off(cfg.relevant);
    Ok(ScmFactors {
        relevant: all,
        irrelevant,
    })
}

fn validate_scm(cfg: &ScmConfig) -> Result<()> {
    let required = cfg.relevant + cfg.irrelevant;
    if cfg.dim < required.max(2) {
        return Err(Error::DimensionTooSmall {
            dim: cfg.dim,
            required: required.max(2),
        });
    }
    if cfg.relevant == 0 {
        return Err(Error::InvalidConfig(
            "at least one relevant factor is required".into(),
        ));
    }
    if cfg.base_classes == 0 {
        return Err(Error::InvalidConfig(
            "at least one base class is required".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.confound) {
        return Err(Error::InvalidConfig(format!(
            "confound {} outside [0, 1]",
            cfg.confound
        )));
    }
    for (name, v) in [
        ("noise_sigma", cfg.noise_sigma),
        ("irrelevant_scale", cfg.irrelevant_scale),
        ("anchor_noise", cfg.anchor_noise),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "{name} must be a finite nonnegative number"
            )));
        }
    }
    Ok(())
}

fn combine(dim: usize, weights: &[f64], dirs: &[Vec<f64>], out: &mut [f64]) {
    debug_assert_eq!(out.len(), dim);
    for (w, d) in weights.iter().zip(dirs) {
        out.iter_mut().zip(d).for_each(|(o, x)| *o += w * x);
    }
}

fn unit_gaussian(n: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates a labelled dataset with anchors for every class.
///
/// Classes `0..base_classes` are base classes, the rest new classes.
pub fn generate_scm_dataset(cfg: &ScmConfig) -> Result<EmbeddingDataset> {
    validate_scm(cfg)?;
    let factors = scm_factors(cfg)?;
    let classes = cfg.base_classes + cfg.new_classes;
    let mut rng = Rng::derive(cfg.seed, &[0x6c6f_6164]);

    // relevant loading per class, unit norm
    let loadings: Vec<Vec<f64>> = (0..classes)
        .map(|_| unit_gaussian(cfg.relevant, &mut rng))
        .collect();
    // label-correlated irrelevant direction per class
    let confounders: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            if cfg.irrelevant > 0 {
                unit_gaussian(cfg.irrelevant, &mut rng)
            } else {
                Vec::new()
            }
        })
        .collect();

    let prototype = |c: usize| {
        let mut v = vec![0.0; cfg.dim];
        combine(cfg.dim, &loadings[c], &factors.relevant, &mut v);
        v
    };

    let anchors = (0..classes)
        .map(|c| {
            let mut r = Rng::derive(cfg.seed, &[0x616e_6368, c as u64]);
            let mut v = prototype(c);
            v.iter_mut()
                .for_each(|x| *x += cfg.anchor_noise * r.gaussian());
            FeatureVector::unit(v).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;

    let plan = (0..classes).flat_map(|c| {
        let base = c < cfg.base_classes;
        let train = if base { cfg.shots } else { 0 };
        let test_split = if base {
            Split::BaseTest
        } else {
            Split::NewTest
        };
        std::iter::repeat_n((c, Split::BaseTrain), train)
            .chain(std::iter::repeat_n((c, test_split), cfg.test_per_class))
    });

    let residual = (1.0 - cfg.confound * cfg.confound).sqrt();
    let mut samples = Vec::new();
    for (index, (class, split)) in plan.enumerate() {
        let mut r = Rng::derive(cfg.seed, &[0x7361_6d70, index as u64]);
        let mut v = prototype(class);
        if cfg.irrelevant > 0 {
            let free = unit_gaussian(cfg.irrelevant, &mut r);
            let weights: Vec<f64> = if split.is_base() {
                confounders[class]
                    .iter()
                    .zip(&free)
                    .map(|(m, f)| cfg.irrelevant_scale * (cfg.confound * m + residual * f))
                    .collect()
            } else {
                free.iter().map(|f| cfg.irrelevant_scale * f).collect()
            };
            combine(cfg.dim, &weights, &factors.irrelevant, &mut v);
        }
        v.iter_mut()
            .for_each(|x| *x += cfg.noise_sigma * r.gaussian());
        samples.push(Sample {
            features: FeatureVector::unit(v)?,
            class,
            split,
        });
    }

    Ok(EmbeddingDataset {
        dim: cfg.dim,
        class_names: (0..classes).map(|c| format!("class{c:02}")).collect(),
        anchors,
        samples,
    })
}

/// Accuracy (percent) of a nearest-centroid classifier on base-test and
/// new-test. Base centroids are means of base-train samples; new classes,
/// which have no training data, fall back to their anchors.
pub fn nearest_centroid_accuracy(ds: &EmbeddingDataset) -> Result<(f64, f64)> {
    let classes = ds.classes();
    let mut sums = vec![vec![0.0; ds.dim]; classes];
    let mut counts = vec![0usize; classes];
    for s in ds.split(Split::BaseTrain) {
        sums[s.class]
            .iter_mut()
            .zip(s.features.iter())
            .for_each(|(a, x)| *a += x);
        counts[s.class] += 1;
    }
    let centroid = |c: usize| -> Result<Vec<f64>> {
        if counts[c] > 0 {
            Ok(sums[c].clone())
        } else {
            ds.anchors[c]
                .as_ref()
                .map(|a| a.as_slice().to_vec())
                .ok_or(Error::MissingAnchor(c))
        }
    };
    let score = |split: Split, pool: &[usize]| -> Result<f64> {
        let cents = pool
            .iter()
            .map(|&c| centroid(c).and_then(FeatureVector::unit))
            .collect::<Result<Vec<_>>>()?;
        let (mut hit, mut n) = (0usize, 0usize);
        for s in ds.split(split) {
            let sims: Vec<f64> = cents.iter().map(|c| dot(c, &s.features)).collect();
            hit += usize::from(pool[argmax(&sims)] == s.class);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyPartition(split.tag()));
        }
        Ok(100.0 * hit as f64 / n as f64)
    };
    Ok((
        score(Split::BaseTest, &ds.base_classes())?,
        score(Split::NewTest, &ds.new_classes())?,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitSummary {
    pub base_classes: Vec<usize>,
    pub new_classes: Vec<usize>,
    pub new_partition_empty: bool,
    pub dropped: usize,
}

/// Re-tags samples so that exactly `base` classes are base classes.
///
/// Samples of base classes keep a base tag (new-test becomes base-test);
/// samples of other classes become new-test. With `shots`, each base
/// class keeps at most that many base-train samples, chosen by `seed`.
pub fn split_base_new(
    ds: &EmbeddingDataset,
    base: &[usize],
    shots: Option<usize>,
    seed: u64,
) -> Result<(EmbeddingDataset, SplitSummary)> {
    if let Some(&bad) = base.iter().find(|&&c| c >= ds.classes()) {
        return Err(Error::UnknownClass(bad));
    }
    let base_set: BTreeSet<usize> = base.iter().copied().collect();
    let mut samples: Vec<Sample> = ds
        .samples
        .iter()
        .map(|s| {
            let split = match (base_set.contains(&s.class), s.split) {
                (true, Split::NewTest) => Split::BaseTest,
                (true, keep) => keep,
                (false, _) => Split::NewTest,
            };
            Sample { split, ..s.clone() }
        })
        .collect();

    let mut dropped = 0;
    if let Some(shots) = shots {
        let mut keep = vec![true; samples.len()];
        for &c in &base_set {
            let mut idx: Vec<usize> = samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.class == c && s.split == Split::BaseTrain)
                .map(|(i, _)| i)
                .collect();
            if idx.len() > shots {
                Rng::derive(seed, &[0x7368_6f74, c as u64]).shuffle(&mut idx);
                for &i in &idx[shots..] {
                    keep[i] = false;
                    dropped += 1;
                }
            }
        }
        let mut k = keep.into_iter();
        samples.retain(|_| k.next().unwrap_or(true));
    }

    let out = EmbeddingDataset {
        samples,
        ..ds.clone()
    };
    let new_classes: Vec<usize> = (0..ds.classes())
        .filter(|c| !base_set.contains(c))
        .collect();
    let summary = SplitSummary {
        base_classes: base_set.into_iter().collect(),
        new_partition_empty: out.split(Split::NewTest).next().is_none(),
        new_classes,
        dropped,
    };
    Ok((out, summary))
}

pub fn dataset_to_string(ds: &EmbeddingDataset) -> Result<String> {
    if let Some(bad) = ds
        .class_names
        .iter()
        .find(|n| n.contains([',', '\n', '\r']) || n.is_empty())
    {
        return Err(Error::InvalidConfig(format!(
            "class name {bad:?} is empty or contains a separator"
        )));
    }
    let mut out = String::new();
    writeln!(out, "{MAGIC} d={} C={}", ds.dim, ds.classes()).unwrap();
    writeln!(out, "{}", ds.class_names.join(",")).unwrap();
    let mut row = |tag: &str, class: usize, v: &FeatureVector| -> Result<()> {
        if v.dim() != ds.dim {
            return Err(Error::DimensionMismatch {
                expected: ds.dim,
                found: v.dim(),
            });
        }
        write!(out, "{tag},{class}").unwrap();
        for x in v.iter() {
            write!(out, ",{x:.16e}").unwrap();
        }
        out.push('\n');
        Ok(())
    };
    for (c, a) in ds.anchors.iter().enumerate() {
        if let Some(a) = a {
            row("anchor", c, a)?;
        }
    }
    for s in &ds.samples {
        row(s.split.tag(), s.class, &s.features)?;
    }
    Ok(out)
}

pub fn write_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = dataset_to_string(ds)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix(MAGIC)?.strip_prefix(' ')?;
    let mut parts = rest.split(' ');
    let d = parts.next()?.strip_prefix("d=")?.parse().ok()?;
    let c = parts.next()?.strip_prefix("C=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((d, c))
}

pub fn parse_dataset(text: &str) -> Result<EmbeddingDataset> {
    // split_inclusive keeps the terminator so a missing final newline is visible
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or(Error::MalformedHeader {
        line: 1,
        detail: "empty file".into(),
    })?;
    let (dim, classes) = parse_header(header.trim_end_matches(['\n', '\r'])).ok_or_else(|| {
        Error::MalformedHeader {
            line: 1,
            detail: format!("expected \"{MAGIC} d=<d> C=<C>\""),
        }
    })?;
    if dim < 2 || classes == 0 {
        return Err(Error::MalformedHeader {
            line: 1,
            detail: format!("need d >= 2 and C >= 1, got d={dim} C={classes}"),
        });
    }
    let mut offset = header.len();
    if !header.ends_with('\n') {
        return Err(Error::TruncatedFile { offset });
    }

    let names_line = lines.next().ok_or(Error::TruncatedFile { offset })?;
    if !names_line.ends_with('\n') {
        return Err(Error::TruncatedFile { offset });
    }
    offset += names_line.len();
    let class_names: Vec<String> = names_line
        .trim_end_matches(['\n', '\r'])
        .split(',')
        .map(str::to_owned)
        .collect();
    if class_names.len() != classes {
        return Err(Error::MalformedHeader {
            line: 2,
            detail: format!(
                "expected {classes} class names, found {}",
                class_names.len()
            ),
        });
    }

    let mut anchors = vec![None; classes];
    let mut samples = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 3;
        if !raw.ends_with('\n') {
            return Err(Error::TruncatedFile { offset });
        }
        offset += raw.len();
        let body = raw.trim_end_matches(['\n', '\r']);
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split(',');
        let tag = fields.next().unwrap_or_default();
        let split = match tag {
            "anchor" => None,
            other => Some(other.parse::<Split>().map_err(|_| Error::UnknownSplitTag {
                line,
                tag: other.to_owned(),
            })?),
        };
        let class: usize =
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::MalformedRow {
                    line,
                    detail: "missing or invalid class index".into(),
                })?;
        if class >= classes {
            return Err(Error::MalformedRow {
                line,
                detail: format!("class index {class} >= C={classes}"),
            });
        }
        let values = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::MalformedRow {
                    line,
                    detail: format!("invalid number {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::RowDimensionMismatch {
                line,
                expected: dim,
                found: values.len(),
            });
        }
        let mut features = FeatureVector::new(values);
        if (features.norm() - 1.0).abs() > 1e-9 {
            features
                .normalize_in_place()
                .map_err(|_| Error::MalformedRow {
                    line,
                    detail: "zero vector".into(),
                })?;
        }
        match split {
            None => anchors[class] = Some(features),
            Some(split) => samples.push(Sample {
                features,
                class,
                split,
            }),
        }
    }

    Ok(EmbeddingDataset {
        dim,
        class_names,
        anchors,
        samples,
    })
}
