//! Multi-kernel maximum mean discrepancy between two feature sets.

use serde::{Deserialize, Serialize};

use crate::diffnet::Matrix;
use crate::error::dim_check;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    /// V-statistic; exactly zero on identical sets and never negative.
    #[default]
    Biased,
    /// U-statistic (diagonal within-set terms dropped); may dip below zero.
    Unbiased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdLoss {
    pub loss: f64,
    pub grad_source: Matrix,
    pub grad_target: Matrix,
}

fn kernel(x: &[f64], y: &[f64], bandwidths: &[f64]) -> (f64, f64) {
    // returns (k, Σ_σ k_σ / σ²), the latter scaling ∂k/∂x = -(x - y) · it
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    bandwidths.iter().fold((0.0, 0.0), |(k, s), &sig| {
        let v = (-d2 / (2.0 * sig * sig)).exp();
        (k + v, s + v / (sig * sig))
    })
}

/// Squared MMD with a sum of Gaussian kernels `exp(-‖x - y‖² / 2σ²)`.
pub fn mmd_loss(source: &Matrix, target: &Matrix, bandwidths: &[f64], estimator: MmdEstimator) -> Result<MmdLoss> {
    let (ns, nt) = (source.rows(), target.rows());
    if ns < 2 || nt < 2 {
        return Err(Error::InvalidArgument(format!(
            "mmd needs at least 2 samples per side, got {ns} and {nt}"
        )));
    }
    dim_check("mmd feature width", source.cols(), target.cols())?;
    if bandwidths.is_empty() || bandwidths.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
        return Err(Error::InvalidArgument("mmd bandwidths must be positive".into()));
    }
    Ok(mmd_unchecked(source, target, bandwidths, estimator))
}

pub(crate) fn mmd_unchecked(source: &Matrix, target: &Matrix, bw: &[f64], estimator: MmdEstimator) -> MmdLoss {
    let p = source.cols();
    let mut gs = Matrix::zeros(source.rows(), p);
    let mut gt = Matrix::zeros(target.rows(), p);
    let within = |x: &Matrix, g: &mut Matrix| -> f64 {
        let n = x.rows() as f64;
        let norm = match estimator {
            MmdEstimator::Biased => n * n,
            MmdEstimator::Unbiased => n * (n - 1.0),
        };
        let mut total = if estimator == MmdEstimator::Biased { n * bw.len() as f64 } else { 0.0 };
        for i in 0..x.rows() {
            for j in (i + 1)..x.rows() {
                let (k, s) = kernel(x.row(i), x.row(j), bw);
                total += 2.0 * k;
                for c in 0..p {
                    let diff = x.get(i, c) - x.get(j, c);
                    let gi = -2.0 * s * diff / norm;
                    g.row_mut(i)[c] += gi;
                    g.row_mut(j)[c] -= gi;
                }
            }
        }
        total / norm
    };
    let xx = within(source, &mut gs);
    let yy = within(target, &mut gt);
    let cross_norm = (source.rows() * target.rows()) as f64;
    let mut xy = 0.0;
    for i in 0..source.rows() {
        for j in 0..target.rows() {
            let (k, s) = kernel(source.row(i), target.row(j), bw);
            xy += k;
            for c in 0..p {
                let diff = source.get(i, c) - target.get(j, c);
                // -2/(ns nt) · ∂k/∂x with ∂k/∂x = -s·diff
                let g = 2.0 * s * diff / cross_norm;
                gs.row_mut(i)[c] += g;
                gt.row_mut(j)[c] -= g;
            }
        }
    }
    MmdLoss {
        loss: xx + yy - 2.0 * xy / cross_norm,
        grad_source: gs,
        grad_target: gt,
    }
}
