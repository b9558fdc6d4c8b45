use std::fmt;

use super::{combine, DescentMode, DirectionOutcome, GradientBundle};

/// Which case of the descent guarantee applies to an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem1Branch {
    /// Pure mode: `d*'g_j >= 0` for every objective.
    Pure,
    /// Guidance mode with `γ* > 0`: `d*'ĝ_v > 0`.
    GuidancePositive,
    /// Guidance mode with `γ* <= 0`: `d*'g_j >= 0` for every objective.
    GuidanceNonPositive,
}

impl fmt::Display for Theorem1Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Theorem1Branch::Pure => "pure descent",
            Theorem1Branch::GuidancePositive => "guidance, gamma > 0",
            Theorem1Branch::GuidanceNonPositive => "guidance, gamma <= 0",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub branch: Theorem1Branch,
    /// `d*'g_j` recomputed in parameter space.
    pub slacks: Vec<f64>,
    /// Per-objective tolerance actually applied.
    pub tolerances: Vec<f64>,
    /// `d*'ĝ_v` recomputed in parameter space.
    pub guidance_inner: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Violation {
    pub branch: Theorem1Branch,
    /// Offending objective, or `None` for the guidance inner product.
    pub objective: Option<usize>,
    pub value: f64,
    pub tolerance: f64,
}

impl fmt::Display for Theorem1Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.objective {
            Some(j) => write!(
                f,
                "[{}] slack d'g_{} = {:e} below -{:e}",
                self.branch,
                j + 1,
                self.value,
                self.tolerance
            ),
            None => write!(f, "[{}] guidance inner product {:e} inconsistent (tol {:e})", self.branch, self.value, self.tolerance),
        }
    }
}

impl std::error::Error for Theorem1Violation {}

/// Checks the descent guarantee on `outcome` in parameter space.
///
/// A slack passes if it is at least `-rel_tol * max(||d*|| ||g_j||, max_i ||g_i||^2)`.
/// The Gram-scale term keeps the check meaningful when `d* ≈ 0`, where the
/// LP's own rounding dominates `||d*||`.
pub fn check_theorem1(bundle: &GradientBundle, outcome: &DirectionOutcome, rel_tol: f64) -> Result<Theorem1Report, Theorem1Violation> {
    let d = combine(bundle.columns(), outcome.weights.as_slice());
    let d_norm = d.norm();
    let g_norms: Vec<f64> = bundle.columns().iter().map(|g| g.norm()).collect();
    let gram_scale = g_norms.iter().fold(0.0_f64, |m, n| m.max(n * n));
    let slacks: Vec<f64> = bundle.columns().iter().map(|g| g.dot(&d)).collect();
    let tolerances: Vec<f64> = g_norms.iter().map(|n| rel_tol * (d_norm * n).max(gram_scale)).collect();
    let guidance_inner = d.dot(bundle.guidance());
    let v_norm = bundle.guidance().norm();

    let branch = match outcome.mode {
        DescentMode::PureDescent => Theorem1Branch::Pure,
        DescentMode::GuidanceDescent if outcome.gamma_star > 0.0 => Theorem1Branch::GuidancePositive,
        DescentMode::GuidanceDescent => Theorem1Branch::GuidanceNonPositive,
    };

    // every |a_j| is at most max_j ||g_j|| ||g_v||, the scale γ* is computed in
    let gamma_tol = rel_tol * (d_norm * v_norm).max(outcome.gamma_star.abs()).max(gram_scale.sqrt() * v_norm);
    if (guidance_inner - outcome.gamma_star).abs() > gamma_tol {
        return Err(Theorem1Violation {
            branch,
            objective: None,
            value: guidance_inner,
            tolerance: gamma_tol,
        });
    }

    match branch {
        Theorem1Branch::GuidancePositive => {
            let tol = 1e-12 * d_norm * v_norm;
            if guidance_inner <= -tol {
                return Err(Theorem1Violation {
                    branch,
                    objective: None,
                    value: guidance_inner,
                    tolerance: tol,
                });
            }
        }
        Theorem1Branch::Pure | Theorem1Branch::GuidanceNonPositive => {
            for (j, (&s, &t)) in slacks.iter().zip(&tolerances).enumerate() {
                if s < -t {
                    return Err(Theorem1Violation {
                        branch,
                        objective: Some(j),
                        value: s,
                        tolerance: t,
                    });
                }
            }
        }
    }
    Ok(Theorem1Report {
        branch,
        slacks,
        tolerances,
        guidance_inner,
    })
}
