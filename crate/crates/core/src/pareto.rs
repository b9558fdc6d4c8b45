//! Pareto-order primitives over points in loss space.

use serde::{Deserialize, Serialize};

use crate::diffnet::{dot, ParamVector};
use crate::error::dim_check;
use crate::{Error, Result};

/// Objective values `(L_1, ..., L_m)` of one solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint(pub Vec<f64>);

impl LossPoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loss point".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &LossPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// A sampled (approximate) Pareto front.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrontSample {
    pub points: Vec<LossPoint>,
    pub params: Option<Vec<ParamVector>>,
}

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
pub fn dominates(a: &LossPoint, b: &LossPoint) -> Result<bool> {
    dim_check("loss point", a.0.len(), b.0.len())?;
    let mut strict = false;
    for (x, y) in a.0.iter().zip(&b.0) {
        if x > y {
            return Ok(false);
        }
        if x < y {
            strict = true;
        }
    }
    Ok(strict)
}

/// Non-dominated subset by pairwise comparison. Duplicates are kept since
/// neither copy strictly dominates the other. Input order is preserved.
pub fn pareto_front(points: &[LossPoint]) -> Result<FrontSample> {
    let keep = non_dominated_mask(points)?;
    Ok(FrontSample {
        points: points
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p.clone())
            .collect(),
        params: None,
    })
}

/// Like [`pareto_front`] but carries the parameter vector of every point along.
pub fn pareto_front_with_params(points: &[LossPoint], params: &[ParamVector]) -> Result<FrontSample> {
    dim_check("front params", points.len(), params.len())?;
    let keep = non_dominated_mask(points)?;
    let mut out = FrontSample {
        points: Vec::new(),
        params: Some(Vec::new()),
    };
    for ((p, th), k) in points.iter().zip(params).zip(keep) {
        if k {
            out.points.push(p.clone());
            out.params.as_mut().unwrap().push(th.clone());
        }
    }
    Ok(out)
}

fn non_dominated_mask(points: &[LossPoint]) -> Result<Vec<bool>> {
    let mut keep = vec![true; points.len()];
    for (i, p) in points.iter().enumerate() {
        for q in points {
            if dominates(q, p)? {
                keep[i] = false;
                break;
            }
        }
    }
    Ok(keep)
}

/// Per-objective directional derivatives `d . g_i` and whether all of them
/// are at least `-tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentCheck {
    pub is_descent: bool,
    pub slacks: Vec<f64>,
}

/// `gradients` holds the columns `g_1..g_m` of `G`.
pub fn is_descent_direction(gradients: &[ParamVector], direction: &ParamVector, tol: f64) -> Result<DescentCheck> {
    let mut slacks = Vec::with_capacity(gradients.len());
    for g in gradients {
        dim_check("descent direction", g.len(), direction.len())?;
        slacks.push(dot(g.as_slice(), direction.as_slice()));
    }
    Ok(DescentCheck {
        is_descent: slacks.iter().all(|&s| s >= -tol),
        slacks,
    })
}

/// Euclidean distance from `p` to the nearest sampled front point.
pub fn nearest_front_distance(p: &LossPoint, front: &FrontSample) -> Result<f64> {
    if front.points.is_empty() {
        return Err(Error::InvalidArgument("front sample is empty".into()));
    }
    let mut best = f64::INFINITY;
    for q in &front.points {
        dim_check("front point", p.0.len(), q.0.len())?;
        best = best.min(p.distance(q));
    }
    Ok(best)
}
