//! Gradient paths on the two-objective toy problem.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::ParamVector;
use crate::dirsolve::{
    compose_direction, compute_gram, linear_direction, mean_direction, select_mode, solve_min_norm, solve_paretoda_lp,
    GradientBundle, DEFAULT_EPSILON,
};
use crate::rng::{self, streams};
use crate::pareto::{nearest_front_distance, FrontSample, LossPoint};
use crate::scenarios::ToyProblem;
use crate::{Error, Result};

/// Losses above this abort the path.
const DIVERGENCE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyMethod {
    Linear([f64; 2]),
    Mean,
    Mgda,
    /// Guided by one of the two objectives' gradients, standing in for a
    /// held-out loss.
    ParetoLike { guidance: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPath {
    /// Loss point before each step, then the final one.
    pub points: Vec<LossPoint>,
    pub final_theta: ParamVector,
    pub final_arc: f64,
    pub front_distance: f64,
}

fn direction(problem: &ToyProblem, method: &ToyMethod, theta: &ParamVector) -> Result<ParamVector> {
    let grads = problem.gradients(theta)?.to_vec();
    match *method {
        ToyMethod::Linear(w) => linear_direction(&grads, &w),
        ToyMethod::Mean => Ok(mean_direction(&grads)),
        ToyMethod::Mgda => {
            let gram: Vec<Vec<f64>> = grads.iter().map(|a| grads.iter().map(|b| a.dot(b)).collect()).collect();
            let (w, _) = solve_min_norm(&gram);
            linear_direction(&grads, w.as_slice())
        }
        ToyMethod::ParetoLike { guidance } => {
            if guidance >= 2 {
                return Err(Error::InvalidArgument(format!("guidance index {guidance} out of range")));
            }
            let l = problem.losses(theta)?[guidance];
            let bundle = GradientBundle::new(grads.clone(), grads[guidance].clone(), l)?;
            let outcome = solve_paretoda_lp(&compute_gram(&bundle)?, select_mode(l, DEFAULT_EPSILON)?)?;
            compose_direction(&bundle, &outcome)
        }
    }
}

/// Uniform start in `[-0.5, 0.5]^dim`, one per seed.
pub fn toy_init(problem: &ToyProblem, seed: u64) -> ParamVector {
    let mut r = rng::child(seed, streams::TOY_INIT);
    ParamVector::from_vec((0..problem.dim).map(|_| r.random_range(-0.5..0.5)).collect())
}

/// Plain descent `θ ← θ - η d` for `steps` steps.
pub fn train_toy(
    problem: &ToyProblem,
    method: &ToyMethod,
    init: &ParamVector,
    eta: f64,
    steps: usize,
    front: &FrontSample,
) -> Result<ToyPath> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let mut theta = init.clone();
    let mut points = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let p = problem.loss_point(&theta)?;
        if p.values().iter().any(|&v| !(v <= DIVERGENCE)) {
            return Err(Error::NumericAbort {
                step,
                reason: format!("toy loss diverged: {:?}", p.values()),
            });
        }
        points.push(p);
        if step < steps {
            let d = direction(problem, method, &theta)?;
            theta.axpy(-eta, &d);
        }
    }
    let last = points.last().expect("at least the initial point");
    Ok(ToyPath {
        front_distance: nearest_front_distance(last, front)?,
        final_arc: problem.arc_position(&theta),
        final_theta: theta,
        points,
    })
}
