//! The four parameter blocks and the per-objective gradients with respect to
//! the shared feature extractor.

use serde::{Deserialize, Serialize};

use crate::diffnet::{sigmoid, softmax_in_place, Activation, ForwardCache, Matrix, Mlp, OutputHead, ParamVector};
use crate::error::dim_check;
use crate::losses::{
    bayes_refine, bayes_refine_backward, classwise_disc_loss, domain_disc_loss, feature_alignment_loss, mmd_loss,
    source_ce_loss, tcm_loss, AlignmentForm, Batch, Domain, MarginalEstimate, MmdEstimator, RefinedPosterior,
    SoftLabelWeights, TcmLoss,
};
use crate::rng::{self, streams};
use crate::{Error, Result};

/// Layer widths of the four blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelArch {
    /// Hidden widths of the feature extractor.
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Hidden width of the domain and class-wise discriminators.
    pub disc_hidden: usize,
    pub activation: Activation,
}

impl Default for ModelArch {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            feature_dim: 16,
            disc_hidden: 16,
            activation: Activation::Tanh,
        }
    }
}

/// Feature extractor θ, classifier φ_c, domain discriminator φ_d, class-wise
/// discriminators v_k and the running class marginal.
///
/// Every network ends in a linear layer; softmax and sigmoid are applied
/// here so that losses can hand back logit gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub feature: Mlp,
    pub classifier: Mlp,
    pub discriminator: Mlp,
    pub classwise: Vec<Mlp>,
    pub marginal: Option<Vec<f64>>,
}

/// Everything one forward pass over a batch produces.
pub struct Forward {
    pub features: Matrix,
    pub class_probs: Matrix,
    pub disc_probs: Vec<f64>,
    /// Column `k` is `p(z = 1 | x, v_k)`.
    pub classwise_probs: Matrix,
    feat_cache: ForwardCache,
    cls_cache: ForwardCache,
    disc_cache: ForwardCache,
    cw_caches: Vec<ForwardCache>,
}

/// L_T (or L_Val) together with its feature-extractor gradient.
pub struct TcmObjective {
    pub loss: TcmLoss,
    pub rho: RefinedPosterior,
    pub grad_feature: ParamVector,
}

/// Losses seen by the auxiliary blocks in one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxLosses {
    pub discriminator: f64,
    pub classwise: f64,
    pub classifier: f64,
}

fn column(values: &[f64]) -> Matrix {
    Matrix::from_vec(values.len(), 1, values.to_vec()).expect("length matches")
}

fn take_column(m: &Matrix, k: usize) -> Matrix {
    column(&m.column(k))
}

fn stack(a: &Matrix, b: &Matrix) -> Matrix {
    let mut data = a.as_slice().to_vec();
    data.extend_from_slice(b.as_slice());
    Matrix::from_vec(a.rows() + b.rows(), a.cols(), data).expect("same width")
}

/// `∂L/∂z` from `∂L/∂p` for row-wise softmax outputs `p`.
fn softmax_backward(probs: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let centre: f64 = grad.row(r).iter().zip(p).map(|(g, p)| g * p).sum();
        for (o, pv) in out.row_mut(r).iter_mut().zip(p) {
            *o = pv * (*o - centre);
        }
    }
    out
}

impl ModelState {
    pub fn init(arch: &ModelArch, input_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
        }
        let mut sizes = vec![input_dim];
        sizes.extend(&arch.hidden);
        sizes.push(arch.feature_dim);
        let act = arch.activation;
        let disc = [arch.feature_dim, arch.disc_hidden, 1];
        let feature = Mlp::init_with(&sizes, act, OutputHead::Linear, &mut rng::child(seed, streams::INIT_FEATURE))?;
        let classifier = Mlp::init_with(
            &[arch.feature_dim, classes],
            act,
            OutputHead::Linear,
            &mut rng::child(seed, streams::INIT_CLASSIFIER),
        )?;
        let discriminator =
            Mlp::init_with(&disc, act, OutputHead::Linear, &mut rng::child(seed, streams::INIT_DISCRIMINATOR))?;
        let classwise = (0..classes)
            .map(|k| {
                Mlp::init_with(
                    &disc,
                    act,
                    OutputHead::Linear,
                    &mut rng::child_indexed(seed, streams::INIT_CLASSWISE, k as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            feature,
            classifier,
            discriminator,
            classwise,
            marginal: None,
        })
    }

    pub fn classes(&self) -> usize {
        self.classwise.len()
    }

    pub fn is_finite(&self) -> bool {
        self.feature.params().is_finite()
            && self.classifier.params().is_finite()
            && self.discriminator.params().is_finite()
            && self.classwise.iter().all(|v| v.params().is_finite())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        let (features, feat_cache) = self.feature.forward_batch(x)?;
        let (mut class_probs, cls_cache) = self.classifier.forward_batch(&features)?;
        for r in 0..class_probs.rows() {
            softmax_in_place(class_probs.row_mut(r));
        }
        let (disc_logits, disc_cache) = self.discriminator.forward_batch(&features)?;
        let disc_probs = disc_logits.as_slice().iter().map(|&z| sigmoid(z)).collect();
        let mut classwise_probs = Matrix::zeros(x.rows(), self.classes());
        let mut cw_caches = Vec::with_capacity(self.classes());
        for (k, v) in self.classwise.iter().enumerate() {
            let (logit, cache) = v.forward_batch(&features)?;
            for r in 0..x.rows() {
                classwise_probs.set(r, k, sigmoid(logit.get(r, 0)));
            }
            cw_caches.push(cache);
        }
        Ok(Forward {
            features,
            class_probs,
            disc_probs,
            classwise_probs,
            feat_cache,
            cls_cache,
            disc_cache,
            cw_caches,
        })
    }

    fn theta_grad(&self, fwd: &Forward, grad_features: &Matrix) -> Result<ParamVector> {
        Ok(self.feature.backward(&fwd.feat_cache, grad_features)?.param_grad)
    }

    /// `L_S` and `∇_θ L_S`.
    pub fn source_objective(&self, fwd: &Forward, labels: &[usize]) -> Result<(f64, ParamVector)> {
        let (loss, g_theta, _) = self.source_gradients(fwd, labels)?;
        Ok((loss, g_theta))
    }

    /// Cross-entropy with gradients for θ and for φ_c.
    pub fn source_gradients(&self, fwd: &Forward, labels: &[usize]) -> Result<(f64, ParamVector, ParamVector)> {
        let (loss, grad_logits) = source_ce_loss(&fwd.class_probs, labels)?;
        let r = self.classifier.backward(&fwd.cls_cache, &grad_logits)?;
        Ok((loss, self.theta_grad(fwd, &r.input_grad)?, r.param_grad))
    }

    /// Adversarial `L_D` as seen by the feature extractor, and its θ-gradient.
    pub fn adversarial_objective(&self, src: &Forward, tgt: &Forward, form: AlignmentForm) -> Result<(f64, ParamVector)> {
        let bl = feature_alignment_loss(&src.disc_probs, &tgt.disc_probs, form)?;
        let gfs = self.discriminator.backward(&src.disc_cache, &column(&bl.grad_source))?.input_grad;
        let gft = self.discriminator.backward(&tgt.disc_cache, &column(&bl.grad_target))?.input_grad;
        let mut g = self.theta_grad(src, &gfs)?;
        g.axpy(1.0, &self.theta_grad(tgt, &gft)?);
        Ok((bl.loss, g))
    }

    /// Kernel-discrepancy `L_D` on the features, and its θ-gradient.
    pub fn mmd_objective(
        &self,
        src: &Forward,
        tgt: &Forward,
        bandwidths: &[f64],
        estimator: MmdEstimator,
    ) -> Result<(f64, ParamVector)> {
        let m = mmd_loss(&src.features, &tgt.features, bandwidths, estimator)?;
        let mut g = self.theta_grad(src, &m.grad_source)?;
        g.axpy(1.0, &self.theta_grad(tgt, &m.grad_target)?);
        Ok((m.loss, g))
    }

    /// Target posteriors used by the TCM loss: Bayes-refined, or the plain
    /// classifier output when `refine` is off.
    pub fn target_posterior(&self, fwd: &Forward, refine: bool) -> Result<RefinedPosterior> {
        if refine {
            bayes_refine(&fwd.class_probs, &fwd.classwise_probs, Domain::Target)
        } else {
            Ok(RefinedPosterior {
                rho: fwd.class_probs.clone(),
                conditioning: Domain::Target,
                fallback_rows: Vec::new(),
            })
        }
    }

    /// TCM loss on an already computed forward pass, differentiated through
    /// the refinement, the classifier and the class-wise discriminators.
    pub fn tcm_forward(&self, fwd: &Forward, marginal: &MarginalEstimate, refine: bool) -> Result<TcmObjective> {
        let rho = self.target_posterior(fwd, refine)?;
        let loss = tcm_loss(&rho, marginal)?;
        let (grad_c, grad_q) = if refine {
            let (gc, gq) = bayes_refine_backward(&fwd.class_probs, &fwd.classwise_probs, &rho, &loss.grad_rho)?;
            (gc, Some(gq))
        } else {
            (loss.grad_rho.clone(), None)
        };
        let logits_grad = softmax_backward(&fwd.class_probs, &grad_c);
        let mut gf = self.classifier.backward(&fwd.cls_cache, &logits_grad)?.input_grad;
        if let Some(mut gq) = grad_q {
            for (g, q) in gq.as_mut_slice().iter_mut().zip(fwd.classwise_probs.as_slice()) {
                *g *= q * (1.0 - q);
            }
            for (k, v) in self.classwise.iter().enumerate() {
                gf.add_assign(&v.backward(&fwd.cw_caches[k], &take_column(&gq, k))?.input_grad);
            }
        }
        let grad_feature = self.theta_grad(fwd, &gf)?;
        Ok(TcmObjective {
            loss,
            rho,
            grad_feature,
        })
    }

    pub fn tcm_objective(&self, batch: &Batch, marginal: &MarginalEstimate, refine: bool) -> Result<TcmObjective> {
        let fwd = self.forward(batch.features())?;
        self.tcm_forward(&fwd, marginal, refine)
    }

    /// One plain gradient step on φ_d, every v_k and φ_c at the current θ.
    ///
    /// All three gradients are taken before any block moves. The target
    /// posterior used as soft labels is computed once and held fixed.
    pub fn update_auxiliaries(
        &mut self,
        source: &Batch,
        target: &Batch,
        eta: f64,
        beta_soft_label: f64,
        refine: bool,
    ) -> Result<AuxLosses> {
        let labels = source
            .labels()
            .ok_or_else(|| Error::InvalidArgument("auxiliary update needs a labelled source batch".into()))?;
        let k = self.classes();
        let src = self.forward(source.features())?;
        let tgt = self.forward(target.features())?;

        let dl = domain_disc_loss(&src.disc_probs, &tgt.disc_probs)?;
        let mut g_disc = self.discriminator.backward(&src.disc_cache, &column(&dl.grad_source))?.param_grad;
        g_disc.axpy(
            1.0,
            &self.discriminator.backward(&tgt.disc_cache, &column(&dl.grad_target))?.param_grad,
        );

        let rho = self.target_posterior(&tgt, refine)?;
        let s_src = crate::losses::soft_label_weights(source, None, k)?;
        let s_tgt = crate::losses::soft_label_weights(target, Some(&rho), k)?;
        let s = SoftLabelWeights(stack(&s_src.0, &s_tgt.0));
        let mut domains = vec![Domain::Source; source.len()];
        domains.extend(std::iter::repeat(Domain::Target).take(target.len()));
        let probs = stack(&src.classwise_probs, &tgt.classwise_probs);
        let (cw_loss, cw_grad) = classwise_disc_loss(&s, &domains, &probs)?;
        let ns = source.len();
        let mut g_cw = Vec::with_capacity(k);
        for (j, v) in self.classwise.iter().enumerate() {
            let col = cw_grad.column(j);
            let mut g = v.backward(&src.cw_caches[j], &column(&col[..ns]))?.param_grad;
            g.axpy(1.0, &v.backward(&tgt.cw_caches[j], &column(&col[ns..]))?.param_grad);
            g_cw.push(g);
        }

        let (ce, ce_grad) = source_ce_loss(&src.class_probs, labels)?;
        let mut g_cls = self.classifier.backward(&src.cls_cache, &ce_grad)?.param_grad;
        let mut soft = 0.0;
        if beta_soft_label > 0.0 {
            let nt = target.len() as f64;
            let mut grad = Matrix::zeros(target.len(), k);
            for i in 0..target.len() {
                for c in 0..k {
                    let (p, r) = (tgt.class_probs.get(i, c), rho.rho.get(i, c));
                    soft -= r * crate::losses::ln_clamped(p) / nt;
                    grad.set(i, c, beta_soft_label * (p - r) / nt);
                }
            }
            g_cls.axpy(1.0, &self.classifier.backward(&tgt.cls_cache, &grad)?.param_grad);
        }

        self.discriminator.descend(eta, &g_disc)?;
        for (v, g) in self.classwise.iter_mut().zip(&g_cw) {
            v.descend(eta, g)?;
        }
        self.classifier.descend(eta, &g_cls)?;
        Ok(AuxLosses {
            discriminator: dl.loss,
            classwise: cw_loss,
            classifier: ce + beta_soft_label * soft,
        })
    }

    /// Arg-max class per row of `x`, from the classifier or from `ρ_{k|1}`.
    pub fn predict(&self, x: &Matrix, refined: bool) -> Result<Vec<usize>> {
        let fwd = self.forward(x)?;
        let post = if refined {
            bayes_refine(&fwd.class_probs, &fwd.classwise_probs, Domain::Target)?.rho
        } else {
            fwd.class_probs
        };
        Ok((0..post.rows())
            .map(|r| {
                let row = post.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }
}

/// Fraction of positions where `pred` and `truth` agree.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    dim_check("predictions", truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::EmptyBatch("accuracy"));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}
