//! Synthetic domain-shift scenarios and the two-objective toy problem.
//!
//! Oracle target labels never travel with the training batches. They sit in
//! [`OracleLabels`], which only evaluation code accepts.

mod toy;

pub use toy::{toy_front_samples, toy_nonconvex, ToyProblem};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffnet::Matrix;
use crate::losses::Batch;
use crate::rng::{self, streams};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_HELDOUT_FRACTION: f64 = 0.1;

/// True target labels, for scoring only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleLabels {
    train: Vec<usize>,
    heldout: Vec<usize>,
}

impl OracleLabels {
    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn heldout(&self) -> &[usize] {
        &self.heldout
    }
}

/// Generator name, its arguments and the source statistics used to
/// standardise both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub generator: String,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub seed: u64,
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaScenario {
    pub source: Batch,
    pub target_train: Batch,
    pub target_heldout: Batch,
    pub classes: usize,
    pub meta: ScenarioMeta,
    /// Row indices into the generated target set, for the disjointness audit.
    pub train_index: Vec<usize>,
    pub heldout_index: Vec<usize>,
    oracle: OracleLabels,
}

impl DaScenario {
    pub fn oracle(&self) -> &OracleLabels {
        &self.oracle
    }

    /// Serialises the scenario, oracle labels included, as one JSON document.
    pub fn to_json(&self) -> Result<String> {
        let file = ScenarioFile {
            schema_version: SCHEMA_VERSION,
            meta: self.meta.clone(),
            classes: self.classes,
            source: SplitFile {
                features: self.source.features().to_rows(),
                labels: self.source.labels().map(<[usize]>::to_vec),
            },
            target_train: SplitFile {
                features: self.target_train.features().to_rows(),
                labels: None,
            },
            target_heldout: SplitFile {
                features: self.target_heldout.features().to_rows(),
                labels: None,
            },
            oracle_labels_train: self.oracle.train.clone(),
            oracle_labels_heldout: self.oracle.heldout.clone(),
            train_index: self.train_index.clone(),
            heldout_index: self.heldout_index.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(text)?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported scenario schema {}", f.schema_version)));
        }
        let labels = f
            .source
            .labels
            .ok_or_else(|| Error::InvalidArgument("source split needs labels".into()))?;
        let source = Batch::source(Matrix::from_rows(&f.source.features)?, labels)?;
        let target_train = Batch::target(Matrix::from_rows(&f.target_train.features)?)?;
        let target_heldout = Batch::target(Matrix::from_rows(&f.target_heldout.features)?)?;
        crate::error::dim_check("oracle train labels", target_train.len(), f.oracle_labels_train.len())?;
        crate::error::dim_check("oracle heldout labels", target_heldout.len(), f.oracle_labels_heldout.len())?;
        Ok(Self {
            source,
            target_train,
            target_heldout,
            classes: f.classes,
            meta: f.meta,
            train_index: f.train_index,
            heldout_index: f.heldout_index,
            oracle: OracleLabels {
                train: f.oracle_labels_train,
                heldout: f.oracle_labels_heldout,
            },
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    meta: ScenarioMeta,
    classes: usize,
    source: SplitFile,
    target_train: SplitFile,
    target_heldout: SplitFile,
    oracle_labels_train: Vec<usize>,
    oracle_labels_heldout: Vec<usize>,
    train_index: Vec<usize>,
    heldout_index: Vec<usize>,
}

/// Result of [`split_heldout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Batch,
    pub heldout: Batch,
    pub train_index: Vec<usize>,
    pub heldout_index: Vec<usize>,
}

/// Uniform split without replacement; the held-out part has `round(fraction * n)` rows.
pub fn split_heldout(batch: &Batch, fraction: f64, seed: u64) -> Result<Split> {
    check_fraction(fraction)?;
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n} samples")));
    }
    let n_held = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::child(seed, streams::HELDOUT_SPLIT));
    let mut heldout_index = perm[..n_held].to_vec();
    let mut train_index = perm[n_held..].to_vec();
    heldout_index.sort_unstable();
    train_index.sort_unstable();
    Ok(Split {
        train: batch.select(&train_index),
        heldout: batch.select(&heldout_index),
        train_index,
        heldout_index,
    })
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("held-out fraction must be in (0, 0.5], got {fraction}")))
    }
}

fn column_stats(rows: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let n = rows.len() as f64;
    let mut mean = [0.0; 2];
    for r in rows {
        mean[0] += r[0] / n;
        mean[1] += r[1] / n;
    }
    let mut var = [0.0; 2];
    for r in rows {
        var[0] += (r[0] - mean[0]).powi(2) / n;
        var[1] += (r[1] - mean[1]).powi(2) / n;
    }
    (mean, [var[0].sqrt().max(1e-12), var[1].sqrt().max(1e-12)])
}

/// Standardises both domains with source statistics, splits the target and
/// wraps everything up.
fn assemble(
    source: Vec<([f64; 2], usize)>,
    target: Vec<([f64; 2], usize)>,
    classes: usize,
    heldout_fraction: f64,
    seed: u64,
    generator: &str,
    params: serde_json::Value,
) -> Result<DaScenario> {
    let src_x: Vec<[f64; 2]> = source.iter().map(|s| s.0).collect();
    let (mean, sd) = column_stats(&src_x);
    let standardise = |x: &[f64; 2]| vec![(x[0] - mean[0]) / sd[0], (x[1] - mean[1]) / sd[1]];
    let src_rows: Vec<Vec<f64>> = source.iter().map(|s| standardise(&s.0)).collect();
    let tgt_rows: Vec<Vec<f64>> = target.iter().map(|s| standardise(&s.0)).collect();
    let src = Batch::source(Matrix::from_rows(&src_rows)?, source.iter().map(|s| s.1).collect())?;
    let tgt_labels: Vec<usize> = target.iter().map(|s| s.1).collect();
    let tgt = Batch::target(Matrix::from_rows(&tgt_rows)?)?;
    let split = split_heldout(&tgt, heldout_fraction, seed)?;
    let oracle = OracleLabels {
        train: split.train_index.iter().map(|&i| tgt_labels[i]).collect(),
        heldout: split.heldout_index.iter().map(|&i| tgt_labels[i]).collect(),
    };
    let params = match params {
        serde_json::Value::Object(m) => m,
        _ => serde_json::Map::new(),
    };
    Ok(DaScenario {
        source: src,
        target_train: split.train,
        target_heldout: split.heldout,
        classes,
        meta: ScenarioMeta {
            generator: generator.to_string(),
            params,
            seed,
            feature_mean: mean.to_vec(),
            feature_sd: sd.to_vec(),
        },
        train_index: split.train_index,
        heldout_index: split.heldout_index,
        oracle,
    })
}

fn rotate(p: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn moons<R: Rng>(n: usize, noise: Normal<f64>, angle: f64, rng: &mut R) -> Vec<([f64; 2], usize)> {
    let mut out: Vec<([f64; 2], usize)> = (0..n)
        .map(|i| {
            let label = usize::from(i >= n / 2);
            let t = rng.random::<f64>() * PI;
            let base = if label == 0 {
                [t.cos(), t.sin()]
            } else {
                [1.0 - t.cos(), 0.5 - t.sin()]
            };
            let noisy = [base[0] + noise.sample(rng), base[1] + noise.sample(rng)];
            (rotate(noisy, angle), label)
        })
        .collect();
    out.shuffle(rng);
    out
}

/// Two interleaving half circles; the target domain is the same generator
/// rotated about the origin.
pub fn make_two_moons_shift(
    n_per_domain: usize,
    rotation_degrees: f64,
    noise_sd: f64,
    heldout_fraction: f64,
    seed: u64,
) -> Result<DaScenario> {
    if n_per_domain < 40 {
        return Err(Error::InvalidArgument(format!("need at least 40 samples per domain, got {n_per_domain}")));
    }
    if !(0.0..=90.0).contains(&rotation_degrees) {
        return Err(Error::InvalidArgument(format!("rotation must be in [0, 90], got {rotation_degrees}")));
    }
    check_fraction(heldout_fraction)?;
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|_| Error::InvalidArgument(format!("noise sd must be non-negative, got {noise_sd}")))?;
    let mut rng = rng::child(seed, streams::SCENARIO);
    let source = moons(n_per_domain, noise, 0.0, &mut rng);
    let target = moons(n_per_domain, noise, rotation_degrees.to_radians(), &mut rng);
    assemble(
        source,
        target,
        2,
        heldout_fraction,
        seed,
        "two_moons_shift",
        serde_json::json!({
            "n_per_domain": n_per_domain,
            "rotation_degrees": rotation_degrees,
            "noise_sd": noise_sd,
            "heldout_fraction": heldout_fraction,
        }),
    )
}

/// Radius of the circle the class means sit on.
pub const GAUSSIAN_RADIUS: f64 = 3.0;
/// Per-axis standard deviation of a source cluster.
pub const GAUSSIAN_SD: f64 = 1.0;

/// Mean of class `k`, before standardisation.
pub fn gaussian_class_mean(k: usize, classes: usize) -> [f64; 2] {
    let a = 2.0 * PI * k as f64 / classes as f64;
    [GAUSSIAN_RADIUS * a.cos(), GAUSSIAN_RADIUS * a.sin()]
}

/// `K` isotropic clusters. The target moves every cluster by `mean_shift`
/// along the diagonal and multiplies its covariance by `covariance_scale`.
pub fn make_gaussian_shift(
    n_per_domain: usize,
    classes: usize,
    mean_shift: f64,
    covariance_scale: f64,
    heldout_fraction: f64,
    seed: u64,
) -> Result<DaScenario> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    if n_per_domain < 2 * classes {
        return Err(Error::InvalidArgument(format!("{n_per_domain} samples is too few for {classes} classes")));
    }
    if !(covariance_scale > 0.0) || !mean_shift.is_finite() {
        return Err(Error::InvalidArgument("covariance scale must be positive and shift finite".into()));
    }
    check_fraction(heldout_fraction)?;
    let mut rng = rng::child(seed, streams::SCENARIO);
    let shift = mean_shift / 2f64.sqrt();
    let draw = |offset: f64, sd: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let normal = Normal::new(0.0, sd).expect("sd checked positive");
        let mut out: Vec<([f64; 2], usize)> = (0..n_per_domain)
            .map(|i| {
                let k = i % classes;
                let m = gaussian_class_mean(k, classes);
                ([m[0] + offset + normal.sample(rng), m[1] + offset + normal.sample(rng)], k)
            })
            .collect();
        out.shuffle(rng);
        out
    };
    let source = draw(0.0, GAUSSIAN_SD, &mut rng);
    let target = draw(shift, GAUSSIAN_SD * covariance_scale.sqrt(), &mut rng);
    assemble(
        source,
        target,
        classes,
        heldout_fraction,
        seed,
        "gaussian_shift",
        serde_json::json!({
            "n_per_domain": n_per_domain,
            "classes": classes,
            "mean_shift": mean_shift,
            "covariance_scale": covariance_scale,
            "heldout_fraction": heldout_fraction,
        }),
    )
}
