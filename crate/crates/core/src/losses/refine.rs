//! Bayes combination of the classifier with the class-wise discriminators.

use super::Domain;
use crate::diffnet::Matrix;
use crate::error::dim_check;
use crate::{Error, Result};

/// Per-sample class posterior conditioned on a domain label.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPosterior {
    pub rho: Matrix,
    pub conditioning: Domain,
    /// Rows whose normaliser was zero and which were copied from the classifier.
    pub fallback_rows: Vec<usize>,
}

fn domain_likelihood(p_target: f64, d: Domain) -> f64 {
    match d {
        Domain::Target => p_target,
        Domain::Source => 1.0 - p_target,
    }
}

fn check_shapes(class_probs: &Matrix, disc_probs: &Matrix) -> Result<()> {
    if class_probs.rows() == 0 {
        return Err(Error::EmptyBatch("bayes_refine"));
    }
    dim_check("discriminator rows", class_probs.rows(), disc_probs.rows())?;
    dim_check("discriminator heads", class_probs.cols(), disc_probs.cols())
}

/// `ρ_k ∝ p(z = d | x, v_k) · p(y = k | x)`, row-normalised.
///
/// `disc_probs[i][k]` is always the probability of the *target* domain; for
/// `d = Source` its complement is used.
pub fn bayes_refine(class_probs: &Matrix, disc_probs: &Matrix, d: Domain) -> Result<RefinedPosterior> {
    check_shapes(class_probs, disc_probs)?;
    if !class_probs.is_finite() || !disc_probs.is_finite() {
        return Err(Error::NonFinite("bayes_refine input".into()));
    }
    let (n, k) = (class_probs.rows(), class_probs.cols());
    let mut rho = Matrix::zeros(n, k);
    let mut fallback_rows = Vec::new();
    for i in 0..n {
        let row = rho.row_mut(i);
        let mut z = 0.0;
        for (j, r) in row.iter_mut().enumerate() {
            *r = domain_likelihood(disc_probs.get(i, j), d) * class_probs.get(i, j);
            z += *r;
        }
        if z > 0.0 {
            row.iter_mut().for_each(|r| *r /= z);
        } else {
            row.copy_from_slice(class_probs.row(i));
            fallback_rows.push(i);
        }
    }
    Ok(RefinedPosterior {
        rho,
        conditioning: d,
        fallback_rows,
    })
}

/// Pulls `∂L/∂ρ` back to `∂L/∂class_probs` and `∂L/∂disc_probs` (the latter
/// with respect to the target-domain probability the caller passed in).
///
/// Fallback rows pass the gradient straight to the classifier.
pub fn bayes_refine_backward(
    class_probs: &Matrix,
    disc_probs: &Matrix,
    refined: &RefinedPosterior,
    grad_rho: &Matrix,
) -> Result<(Matrix, Matrix)> {
    check_shapes(class_probs, disc_probs)?;
    dim_check("refined rows", class_probs.rows(), refined.rho.rows())?;
    dim_check("grad rows", class_probs.rows(), grad_rho.rows())?;
    dim_check("grad cols", class_probs.cols(), grad_rho.cols())?;
    let (n, k) = (class_probs.rows(), class_probs.cols());
    let sign = match refined.conditioning {
        Domain::Target => 1.0,
        Domain::Source => -1.0,
    };
    let mut gc = Matrix::zeros(n, k);
    let mut gq = Matrix::zeros(n, k);
    let mut fallback = refined.fallback_rows.iter().peekable();
    for i in 0..n {
        if fallback.peek() == Some(&&i) {
            fallback.next();
            gc.row_mut(i).copy_from_slice(grad_rho.row(i));
            continue;
        }
        let rho = refined.rho.row(i);
        let g = grad_rho.row(i);
        let z: f64 = (0..k)
            .map(|j| domain_likelihood(disc_probs.get(i, j), refined.conditioning) * class_probs.get(i, j))
            .sum();
        let centre: f64 = g.iter().zip(rho).map(|(a, b)| a * b).sum();
        for j in 0..k {
            let q = domain_likelihood(disc_probs.get(i, j), refined.conditioning);
            let c = class_probs.get(i, j);
            let common = (g[j] - centre) / z;
            gc.set(i, j, q * common);
            gq.set(i, j, sign * c * common);
        }
    }
    Ok((gc, gq))
}
