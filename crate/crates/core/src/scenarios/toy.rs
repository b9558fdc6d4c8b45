//! Two Gaussian-well objectives whose Pareto front is concave in loss space.

use crate::diffnet::ParamVector;
use crate::pareto::{pareto_front_with_params, FrontSample, LossPoint};
use crate::{Error, Result};

/// `L1 = 1 - exp(-‖θ - u‖²)`, `L2 = 1 - exp(-‖θ + u‖²)` with `u = 1/√dim · 1`.
///
/// The Pareto set is the segment `θ = t·u`, `t ∈ [-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyProblem {
    pub dim: usize,
}

pub fn toy_nonconvex(dim: usize) -> Result<ToyProblem> {
    if dim == 0 {
        return Err(Error::InvalidArgument("toy dimension must be at least 1".into()));
    }
    Ok(ToyProblem { dim })
}

impl ToyProblem {
    fn u(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        crate::error::dim_check("toy parameter", self.dim, theta.len())
    }

    fn sq_dist(&self, theta: &ParamVector, sign: f64) -> f64 {
        let u = self.u();
        theta.as_slice().iter().map(|x| (x - sign * u).powi(2)).sum()
    }

    pub fn losses(&self, theta: &ParamVector) -> Result<[f64; 2]> {
        self.check(theta)?;
        Ok([
            1.0 - (-self.sq_dist(theta, 1.0)).exp(),
            1.0 - (-self.sq_dist(theta, -1.0)).exp(),
        ])
    }

    pub fn loss_point(&self, theta: &ParamVector) -> Result<LossPoint> {
        LossPoint::new(self.losses(theta)?.to_vec())
    }

    pub fn gradients(&self, theta: &ParamVector) -> Result<[ParamVector; 2]> {
        self.check(theta)?;
        let u = self.u();
        let grad = |sign: f64| {
            let e = (-self.sq_dist(theta, sign)).exp();
            ParamVector::from_vec(theta.as_slice().iter().map(|x| 2.0 * e * (x - sign * u)).collect())
        };
        Ok([grad(1.0), grad(-1.0)])
    }

    /// `θ(t) = t·u`.
    pub fn front_point(&self, t: f64) -> ParamVector {
        ParamVector::from_vec(vec![t * self.u(); self.dim])
    }

    /// Arc position `t = θ·u` of the projection of `θ` onto the front line.
    pub fn arc_position(&self, theta: &ParamVector) -> f64 {
        theta.as_slice().iter().sum::<f64>() * self.u()
    }
}

/// Evenly spaced front points `t ∈ [-1, 1]`, checked for mutual non-dominance.
pub fn toy_front_samples(problem: &ToyProblem, n_samples: usize) -> Result<FrontSample> {
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 front samples, got {n_samples}")));
    }
    let mut points = Vec::with_capacity(n_samples);
    let mut params = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = -1.0 + 2.0 * i as f64 / (n_samples - 1) as f64;
        let theta = problem.front_point(t);
        points.push(problem.loss_point(&theta)?);
        params.push(theta);
    }
    let front = pareto_front_with_params(&points, &params)?;
    if front.points.len() != n_samples {
        return Err(Error::InvalidArgument(format!(
            "toy front trace has {} dominated points",
            n_samples - front.points.len()
        )));
    }
    Ok(front)
}
