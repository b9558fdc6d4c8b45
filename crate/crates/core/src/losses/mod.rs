//! Training objectives and the Bayes target-prediction refinement.
//!
//! Loss functions take probabilities (post softmax / sigmoid) and return
//! gradients with respect to the *logits* that produced them, which is what
//! the networks' backward passes consume.

mod mmd;
mod refine;

pub use mmd::{mmd_loss, MmdEstimator, MmdLoss};
pub use refine::{bayes_refine, bayes_refine_backward, RefinedPosterior};

use serde::{Deserialize, Serialize};

use crate::diffnet::{Matrix, ParamVector};
use crate::error::dim_check;
use crate::trainer::ModelState;
use crate::{Error, Result};

/// Lower clamp applied to every probability inside a logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Domain label `z`: 0 for source, 1 for target.
    pub fn label(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

/// Samples from one domain; labels are present exactly for source batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Matrix,
    labels: Option<Vec<usize>>,
    domain: Domain,
}

impl Batch {
    pub fn source(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyBatch("source batch"));
        }
        dim_check("source labels", features.rows(), labels.len())?;
        Ok(Self {
            features,
            labels: Some(labels),
            domain: Domain::Source,
        })
    }

    pub fn target(features: Matrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyBatch("target batch"));
        }
        Ok(Self {
            features,
            labels: None,
            domain: Domain::Target,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Sub-batch of the given rows.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            domain: self.domain,
        }
    }
}

/// Per-sample class weights `s_{k|d}` used by the class-wise discriminator loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelWeights(pub Matrix);

/// The scalar objectives of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_s: f64,
    pub l_d: f64,
    pub l_t: f64,
    pub l_val_shifted: f64,
}

pub(crate) fn ln_clamped(p: f64) -> f64 {
    p.max(PROB_CLAMP).ln()
}

fn ln_binary(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// Mean negative log-likelihood; gradient `(p - onehot) / n` at the logits.
pub fn source_ce_loss(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = probs.rows();
    if n == 0 {
        return Err(Error::EmptyBatch("source_ce_loss"));
    }
    dim_check("labels", n, labels.len())?;
    let k = probs.cols();
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {k} classes")));
        }
        loss -= ln_clamped(probs.get(i, y));
        let g = grad.row_mut(i);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok((loss / n as f64, grad))
}

/// A binary cross-entropy over a source batch and a target batch, with the
/// gradients at the discriminator logits of each side.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLoss {
    pub loss: f64,
    pub grad_source: Vec<f64>,
    pub grad_target: Vec<f64>,
}

/// `½ (mean_s BCE(p, y_s) + mean_t BCE(p, y_t))`, where `p` is the probability of "target".
fn balanced_bce(p_source: &[f64], p_target: &[f64], y_source: f64, y_target: f64) -> Result<BinaryLoss> {
    if p_source.is_empty() || p_target.is_empty() {
        return Err(Error::EmptyBatch("domain discriminator loss"));
    }
    let side = |ps: &[f64], y: f64| -> (f64, Vec<f64>) {
        let n = ps.len() as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(ps.len());
        for &p in ps {
            loss -= y * ln_binary(p) + (1.0 - y) * ln_binary(1.0 - p);
            grad.push(0.5 * (p - y) / n);
        }
        (0.5 * loss / n, grad)
    };
    let (ls, gs) = side(p_source, y_source);
    let (lt, gt) = side(p_target, y_target);
    Ok(BinaryLoss {
        loss: ls + lt,
        grad_source: gs,
        grad_target: gt,
    })
}

/// Discriminator objective: source labelled 0, target labelled 1.
pub fn domain_disc_loss(p_source: &[f64], p_target: &[f64]) -> Result<BinaryLoss> {
    balanced_bce(p_source, p_target, 0.0, 1.0)
}

/// How the feature extractor plays against the domain discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentForm {
    /// Cross-entropy against inverted domain labels.
    #[default]
    Confusion,
    /// The negated discriminator loss.
    Negated,
}

/// Feature-extractor side of the adversarial game.
pub fn feature_alignment_loss(p_source: &[f64], p_target: &[f64], form: AlignmentForm) -> Result<BinaryLoss> {
    match form {
        AlignmentForm::Confusion => balanced_bce(p_source, p_target, 1.0, 0.0),
        AlignmentForm::Negated => {
            let mut l = domain_disc_loss(p_source, p_target)?;
            l.loss = -l.loss;
            l.grad_source.iter_mut().for_each(|g| *g = -*g);
            l.grad_target.iter_mut().for_each(|g| *g = -*g);
            Ok(l)
        }
    }
}

/// Source rows become one-hot labels, target rows the refined posterior.
pub fn soft_label_weights(batch: &Batch, refined: Option<&RefinedPosterior>, classes: usize) -> Result<SoftLabelWeights> {
    match (batch.domain(), batch.labels(), refined) {
        (Domain::Source, Some(labels), None) => {
            let mut s = Matrix::zeros(labels.len(), classes);
            for (i, &y) in labels.iter().enumerate() {
                if y >= classes {
                    return Err(Error::InvalidArgument(format!("label {y} out of range for {classes} classes")));
                }
                s.set(i, y, 1.0);
            }
            Ok(SoftLabelWeights(s))
        }
        (Domain::Target, None, Some(r)) => {
            dim_check("refined rows", batch.len(), r.rho.rows())?;
            dim_check("refined classes", classes, r.rho.cols())?;
            Ok(SoftLabelWeights(r.rho.clone()))
        }
        (Domain::Source, _, _) => Err(Error::InvalidArgument("source batch needs hard labels and no posterior".into())),
        (Domain::Target, _, _) => Err(Error::InvalidArgument("target batch needs a refined posterior and no labels".into())),
    }
}

/// Class-wise discriminator loss
/// `-(1/n) Σ_i Σ_k s_ik log p(z = z_i | x_i, v_k)`, with `s` held constant.
///
/// `disc_probs[i][k]` is `p(z = 1 | x_i, v_k)`. Returns the gradient at each
/// head's logit.
pub fn classwise_disc_loss(s: &SoftLabelWeights, domains: &[Domain], disc_probs: &Matrix) -> Result<(f64, Matrix)> {
    let n = disc_probs.rows();
    if n == 0 {
        return Err(Error::EmptyBatch("classwise_disc_loss"));
    }
    dim_check("soft label rows", n, s.0.rows())?;
    dim_check("soft label cols", disc_probs.cols(), s.0.cols())?;
    dim_check("domain labels", n, domains.len())?;
    let mut grad = Matrix::zeros(n, disc_probs.cols());
    let mut loss = 0.0;
    for i in 0..n {
        let z = domains[i].label() as f64;
        for k in 0..disc_probs.cols() {
            let w = s.0.get(i, k);
            if w == 0.0 {
                continue;
            }
            let p = disc_probs.get(i, k);
            loss -= w * (z * ln_binary(p) + (1.0 - z) * ln_binary(1.0 - p));
            grad.set(i, k, w * (p - z) / n as f64);
        }
    }
    Ok((loss / n as f64, grad))
}

/// How the class marginal `ρ̂` in the TCM loss is estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalEstimate {
    /// Mean of the current batch's rows.
    BatchMean,
    /// `decay * previous + (1 - decay) * batch mean`; gradients flow through the batch part only.
    Ema { previous: Vec<f64>, decay: f64 },
}

/// Value and gradient of the TCM loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TcmLoss {
    /// `Σ_k ρ̂_k ln ρ̂_k - mean_i Σ_k ρ_ik ln ρ_ik`.
    pub raw: f64,
    /// `raw + ln K`.
    pub shifted: f64,
    /// `∂ raw / ∂ ρ_ik`.
    pub grad_rho: Matrix,
    /// The marginal actually used, which is the next EMA state.
    pub marginal: Vec<f64>,
}

/// Information-maximisation loss over refined target posteriors.
pub fn tcm_loss(refined: &RefinedPosterior, marginal: &MarginalEstimate) -> Result<TcmLoss> {
    let rho = &refined.rho;
    let n = rho.rows();
    let k = rho.cols();
    if n == 0 {
        return Err(Error::EmptyBatch("tcm_loss"));
    }
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(rho.row(i)) {
            *m += v / n as f64;
        }
    }
    let (marg, batch_weight) = match marginal {
        MarginalEstimate::BatchMean => (mean, 1.0),
        MarginalEstimate::Ema { previous, decay } => {
            dim_check("ema marginal", k, previous.len())?;
            if !(0.0..1.0).contains(decay) {
                return Err(Error::InvalidArgument(format!("ema decay must be in [0,1), got {decay}")));
            }
            (previous.iter().zip(&mean).map(|(p, m)| decay * p + (1.0 - decay) * m).collect(), 1.0 - decay)
        }
    };
    let xlogx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let neg_entropy_marg: f64 = marg.iter().map(|&p| xlogx(p)).sum();
    let mut mean_neg_entropy = 0.0;
    let mut grad = Matrix::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            let p = rho.get(i, c);
            mean_neg_entropy += xlogx(p) / n as f64;
            let g = batch_weight * (ln_clamped(marg[c]) + 1.0) / n as f64 - (ln_clamped(p) + 1.0) / n as f64;
            grad.set(i, c, g);
        }
    }
    let raw = neg_entropy_marg - mean_neg_entropy;
    Ok(TcmLoss {
        raw,
        shifted: raw + (k as f64).ln(),
        grad_rho: grad,
        marginal: marg,
    })
}

/// Held-out guidance: the shifted TCM loss on `heldout` (batch-mean marginal)
/// and its gradient with respect to the feature-extractor parameters only.
pub fn validation_guidance(heldout: &Batch, model: &ModelState, refine: bool) -> Result<(f64, ParamVector)> {
    if heldout.is_empty() {
        return Err(Error::EmptyBatch("validation_guidance"));
    }
    if heldout.domain() != Domain::Target {
        return Err(Error::InvalidArgument("held-out guidance needs a target-domain batch".into()));
    }
    let obj = model.tcm_objective(heldout, &MarginalEstimate::BatchMean, refine)?;
    Ok((obj.loss.shifted, obj.grad_feature))
}

#[cfg(test)]
mod tests;
