//! Training loops: the domain-adaptation step with its three baselines, the
//! toy-problem path tracer and the supervised-target reference run.

mod model;
mod toy;

pub use model::{accuracy, AuxLosses, Forward, ModelArch, ModelState, TcmObjective};
pub use toy::{toy_init, train_toy, ToyMethod, ToyPath};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::diffnet::ParamVector;
use crate::dirsolve::{
    check_theorem1, compose_direction, compute_gram, linear_direction, mean_direction, select_mode, solve_min_norm,
    solve_paretoda_lp, GradientBundle, DEFAULT_EPSILON,
};
use crate::losses::{validation_guidance, AlignmentForm, Batch, MarginalEstimate, MmdEstimator};
use crate::rng::{self, streams};
use crate::scenarios::{make_gaussian_shift, make_two_moons_shift, DaScenario, DEFAULT_HELDOUT_FRACTION};
use crate::{Error, Result};

/// Relative tolerance of the per-step descent-guarantee check.
pub const THEOREM_REL_TOL: f64 = 1e-8;
/// Bound on `‖d - G w‖` for the applied direction.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Paretoda,
    Linear,
    Mean,
    Mgda,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Paretoda => "paretoda",
            Method::Linear => "linear",
            Method::Mean => "mean",
            Method::Mgda => "mgda",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paretoda" => Ok(Method::Paretoda),
            "linear" => Ok(Method::Linear),
            "mean" => Ok(Method::Mean),
            "mgda" => Ok(Method::Mgda),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Adversarial,
    Mmd,
}

/// Where the class marginal inside the training-batch TCM loss comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalMode {
    Ema,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    TwoMoons {
        #[serde(default = "defaults::n_per_domain")]
        n_per_domain: usize,
        #[serde(default = "defaults::rotation")]
        rotation_degrees: f64,
        #[serde(default = "defaults::noise")]
        noise_sd: f64,
        #[serde(default = "defaults::heldout")]
        heldout_fraction: f64,
    },
    Gaussian {
        #[serde(default = "defaults::n_per_domain")]
        n_per_domain: usize,
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default)]
        mean_shift: f64,
        #[serde(default = "defaults::one")]
        covariance_scale: f64,
        #[serde(default = "defaults::heldout")]
        heldout_fraction: f64,
    },
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::TwoMoons {
            n_per_domain: defaults::n_per_domain(),
            rotation_degrees: defaults::rotation(),
            noise_sd: defaults::noise(),
            heldout_fraction: defaults::heldout(),
        }
    }
}

impl ScenarioSpec {
    pub fn build(&self, seed: u64) -> Result<DaScenario> {
        match *self {
            ScenarioSpec::TwoMoons {
                n_per_domain,
                rotation_degrees,
                noise_sd,
                heldout_fraction,
            } => make_two_moons_shift(n_per_domain, rotation_degrees, noise_sd, heldout_fraction, seed),
            ScenarioSpec::Gaussian {
                n_per_domain,
                classes,
                mean_shift,
                covariance_scale,
                heldout_fraction,
            } => make_gaussian_shift(n_per_domain, classes, mean_shift, covariance_scale, heldout_fraction, seed),
        }
    }
}

mod defaults {
    pub fn n_per_domain() -> usize {
        500
    }
    pub fn rotation() -> f64 {
        30.0
    }
    pub fn noise() -> f64 {
        0.1
    }
    pub fn heldout() -> f64 {
        super::DEFAULT_HELDOUT_FRACTION
    }
    pub fn classes() -> usize {
        3
    }
    pub fn one() -> f64 {
        1.0
    }
}

/// One training run. Every field except `method` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub method: Method,
    /// Weights on (L_S, L_D, L_T) for `method = linear`.
    pub linear_weights: Vec<f64>,
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub epsilon: f64,
    /// Multipliers (λ₀, λ₁) on L_S and L_D before the direction is chosen.
    pub scale_factors: [f64; 2],
    pub alignment: Alignment,
    pub alignment_form: AlignmentForm,
    pub mmd_bandwidths: Vec<f64>,
    pub mmd_estimator: MmdEstimator,
    pub beta_soft_label: f64,
    /// Step size of φ_c, φ_d and the v_k; `None` uses `eta`.
    pub aux_eta: Option<f64>,
    pub ema_decay: f64,
    pub marginal: MarginalMode,
    /// Bayes refinement inside L_T and L_Val; off gives plain information maximisation.
    pub refine: bool,
    /// Evaluate target accuracy every this many steps (and always on the last).
    pub eval_every: usize,
    pub seed: u64,
    pub model: ModelArch,
    pub scenario: ScenarioSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            method: Method::Paretoda,
            linear_weights: vec![1.0, 1.0, 1.0],
            eta: 0.05,
            steps: 2000,
            batch_size: 64,
            epsilon: DEFAULT_EPSILON,
            scale_factors: [1.0, 1.0],
            alignment: Alignment::Adversarial,
            alignment_form: AlignmentForm::Confusion,
            mmd_bandwidths: vec![0.5, 1.0, 2.0, 4.0],
            mmd_estimator: MmdEstimator::Biased,
            beta_soft_label: 1.0,
            aux_eta: None,
            ema_decay: 0.9,
            marginal: MarginalMode::Ema,
            refine: true,
            eval_every: 1,
            seed: 0,
            model: ModelArch::default(),
            scenario: ScenarioSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn aux_eta(&self) -> f64 {
        self.aux_eta.unwrap_or(self.eta)
    }

    /// Range checks; the message names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if self.schema_version != 1 {
            return bad("schema_version", format!("unsupported version {}", self.schema_version));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be positive, got {}", self.eta));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if self.scale_factors.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("scale_factors", format!("must be positive, got {:?}", self.scale_factors));
        }
        if self.method == Method::Linear
            && (self.linear_weights.len() != 3 || self.linear_weights.iter().any(|&w| !(w >= 0.0)))
        {
            return bad("linear_weights", format!("need 3 non-negative weights, got {:?}", self.linear_weights));
        }
        if !(self.beta_soft_label >= 0.0) {
            return bad("beta_soft_label", format!("must be non-negative, got {}", self.beta_soft_label));
        }
        if let Some(a) = self.aux_eta {
            if !(a > 0.0 && a.is_finite()) {
                return bad("aux_eta", format!("must be positive, got {a}"));
            }
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay", format!("must be in [0, 1), got {}", self.ema_decay));
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be positive".into());
        }
        Ok(())
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub l_s: f64,
    pub l_d: f64,
    pub l_t: f64,
    pub l_val_shifted: f64,
    pub w: Vec<f64>,
    pub gamma: f64,
    pub mode: String,
    pub slacks: Vec<f64>,
    pub d_norm: f64,
    pub acc_raw: Option<f64>,
    pub acc_refined: Option<f64>,
    pub fallback: String,
    /// Branch of the descent guarantee that was verified (ParetoDA only).
    pub theorem_branch: Option<String>,
    /// `‖d - Σ w_j g_j‖` recomputed from the training gradients (ParetoDA only).
    pub residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DaRun {
    pub state: ModelState,
    pub trace: Vec<StepTrace>,
}

impl DaRun {
    pub fn final_accuracy(&self) -> Option<(f64, f64)> {
        self.trace.last().and_then(|t| Some((t.acc_raw?, t.acc_refined?)))
    }
}

/// The only door through which held-out target data reaches training.
pub trait GuidanceSource {
    /// Shifted held-out loss and its gradient with respect to θ.
    fn guidance(&mut self, model: &ModelState) -> Result<(f64, ParamVector)>;
}

/// Cycles through the held-out set in fixed-size mini-batches.
pub struct HeldoutGuidance {
    heldout: Batch,
    batch_size: usize,
    refine: bool,
    cursor: usize,
}

impl HeldoutGuidance {
    pub fn new(heldout: Batch, batch_size: usize, refine: bool) -> Self {
        Self {
            heldout,
            batch_size,
            refine,
            cursor: 0,
        }
    }
}

impl GuidanceSource for HeldoutGuidance {
    fn guidance(&mut self, model: &ModelState) -> Result<(f64, ParamVector)> {
        let n = self.heldout.len();
        let b = self.batch_size.min(n);
        if b == n {
            return validation_guidance(&self.heldout, model, self.refine);
        }
        let idx: Vec<usize> = (0..b).map(|j| (self.cursor + j) % n).collect();
        self.cursor = (self.cursor + b) % n;
        validation_guidance(&self.heldout.select(&idx), model, self.refine)
    }
}

/// Training inputs: labelled source and unlabelled target, nothing else.
pub struct TrainingData<'a> {
    pub source: &'a Batch,
    pub target: &'a Batch,
    pub classes: usize,
}

/// Scores a model; returns (raw, refined) accuracy.
pub type Evaluator<'a> = dyn Fn(&ModelState) -> Result<(f64, f64)> + 'a;

/// Accuracy on `target_train` against the oracle labels.
pub fn evaluate_target_accuracy(state: &ModelState, scenario: &DaScenario, refined: bool) -> Result<f64> {
    let pred = state.predict(scenario.target_train.features(), refined)?;
    accuracy(&pred, scenario.oracle().train())
}

fn scenario_evaluator(scenario: &DaScenario) -> impl Fn(&ModelState) -> Result<(f64, f64)> + '_ {
    move |state: &ModelState| {
        Ok((
            evaluate_target_accuracy(state, scenario, false)?,
            evaluate_target_accuracy(state, scenario, true)?,
        ))
    }
}

/// Builds the scenario from the config and runs [`run_da`].
pub fn train_da(config: &TrainConfig) -> Result<DaRun> {
    config.validate()?;
    let scenario = config.scenario.build(config.seed)?;
    train_da_on(config, &scenario)
}

/// [`train_da`] on an existing scenario.
pub fn train_da_on(config: &TrainConfig, scenario: &DaScenario) -> Result<DaRun> {
    let data = TrainingData {
        source: &scenario.source,
        target: &scenario.target_train,
        classes: scenario.classes,
    };
    let mut guidance = HeldoutGuidance::new(scenario.target_heldout.clone(), config.batch_size, config.refine);
    run_da(config, &data, &mut guidance, &scenario_evaluator(scenario))
}

/// Mini-batch index draws for one run.
struct Sampler {
    rng: rand_chacha::ChaCha8Rng,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: rng::child(seed, streams::BATCHES),
        }
    }

    fn draw(&mut self, batch: &Batch, size: usize) -> Batch {
        let n = batch.len();
        let mut idx = index::sample(&mut self.rng, n, size.min(n)).into_vec();
        idx.sort_unstable();
        batch.select(&idx)
    }
}

/// Per-step quantities shared by every direction rule.
struct StepGradients {
    losses: [f64; 3],
    columns: Vec<ParamVector>,
    marginal: Vec<f64>,
}

fn finite_or_abort(step: usize, what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericAbort {
            step,
            reason: format!("{what} is {v}"),
        })
    }
}

fn training_gradients(
    config: &TrainConfig,
    state: &ModelState,
    source: &Batch,
    target: &Batch,
    step: usize,
) -> Result<StepGradients> {
    let labels = source.labels().expect("source batches carry labels");
    let src = state.forward(source.features())?;
    let tgt = state.forward(target.features())?;
    let (l_s, mut g1) = state.source_objective(&src, labels)?;
    let (l_d, mut g2) = match config.alignment {
        Alignment::Adversarial => state.adversarial_objective(&src, &tgt, config.alignment_form)?,
        Alignment::Mmd => state.mmd_objective(&src, &tgt, &config.mmd_bandwidths, config.mmd_estimator)?,
    };
    let marginal = match (config.marginal, &state.marginal) {
        (MarginalMode::Ema, Some(prev)) => MarginalEstimate::Ema {
            previous: prev.clone(),
            decay: config.ema_decay,
        },
        _ => MarginalEstimate::BatchMean,
    };
    let tcm = state.tcm_forward(&tgt, &marginal, config.refine)?;
    let [c0, c1] = config.scale_factors;
    g1.scale(c0);
    g2.scale(c1);
    let losses = [
        finite_or_abort(step, "l_s", c0 * l_s)?,
        finite_or_abort(step, "l_d", c1 * l_d)?,
        finite_or_abort(step, "l_t", tcm.loss.raw)?,
    ];
    let columns = vec![g1, g2, tcm.grad_feature];
    if let Some(j) = columns.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericAbort {
            step,
            reason: format!("gradient of objective {j} is not finite"),
        });
    }
    Ok(StepGradients {
        losses,
        columns,
        marginal: tcm.loss.marginal,
    })
}

/// The chosen direction plus what the trace records about it.
struct Chosen {
    d: ParamVector,
    w: Vec<f64>,
    gamma: f64,
    mode: String,
    slacks: Vec<f64>,
    fallback: String,
    theorem_branch: Option<String>,
    residual: Option<f64>,
}

fn choose_direction(
    config: &TrainConfig,
    columns: Vec<ParamVector>,
    guidance: ParamVector,
    l_val_shifted: f64,
    step: usize,
) -> Result<Chosen> {
    let slacks_of = |cols: &[ParamVector], d: &ParamVector| cols.iter().map(|g| g.dot(d)).collect::<Vec<_>>();
    match config.method {
        Method::Paretoda => {
            let bundle = GradientBundle::new(columns, guidance, l_val_shifted)?;
            let gram = compute_gram(&bundle)?;
            let mode = select_mode(l_val_shifted, config.epsilon)?;
            let outcome = solve_paretoda_lp(&gram, mode)?;
            let d = compose_direction(&bundle, &outcome)?;
            let report = check_theorem1(&bundle, &outcome, THEOREM_REL_TOL)
                .map_err(|v| Error::TheoremViolation(format!("step {step}: {v}")))?;
            let recomposed = linear_direction(bundle.columns(), outcome.weights.as_slice())?;
            let residual = d
                .as_slice()
                .iter()
                .zip(recomposed.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if !(residual < RESIDUAL_TOL) {
                return Err(Error::TheoremViolation(format!(
                    "step {step}: direction leaves the span of the training gradients (residual {residual:e})"
                )));
            }
            Ok(Chosen {
                gamma: d.dot(bundle.guidance()),
                slacks: slacks_of(bundle.columns(), &d),
                d,
                w: outcome.weights.as_slice().to_vec(),
                mode: outcome.mode.as_str().to_string(),
                fallback: outcome.fallback.as_str().to_string(),
                theorem_branch: Some(report.branch.to_string()),
                residual: Some(residual),
            })
        }
        Method::Linear | Method::Mean | Method::Mgda => {
            let (d, w, mode) = match config.method {
                Method::Linear => {
                    let total: f64 = config.linear_weights.iter().sum();
                    let d = linear_direction(&columns, &config.linear_weights)?;
                    let w = if total > 0.0 {
                        config.linear_weights.iter().map(|v| v / total).collect()
                    } else {
                        vec![0.0; 3]
                    };
                    (d, w, "baseline")
                }
                Method::Mean => (mean_direction(&columns), vec![1.0 / 3.0; 3], "baseline"),
                _ => {
                    let gram: Vec<Vec<f64>> = columns
                        .iter()
                        .map(|a| columns.iter().map(|b| a.dot(b)).collect())
                        .collect();
                    let (w, _) = solve_min_norm(&gram);
                    let d = linear_direction(&columns, w.as_slice())?;
                    (d, w.as_slice().to_vec(), "min_norm")
                }
            };
            Ok(Chosen {
                gamma: d.dot(&guidance),
                slacks: slacks_of(&columns, &d),
                d,
                w,
                mode: mode.to_string(),
                fallback: "none".to_string(),
                theorem_branch: None,
                residual: None,
            })
        }
    }
}

fn one_step(
    config: &TrainConfig,
    data: &TrainingData<'_>,
    guidance: &mut dyn GuidanceSource,
    evaluate: &Evaluator<'_>,
    state: &mut ModelState,
    sampler: &mut Sampler,
    step: usize,
) -> Result<StepTrace> {
    let src = sampler.draw(data.source, config.batch_size);
    let tgt = sampler.draw(data.target, config.batch_size);
    let grads = training_gradients(config, state, &src, &tgt, step)?;
    let (l_val_shifted, g_val) = guidance.guidance(state)?;
    finite_or_abort(step, "l_val_shifted", l_val_shifted)?;
    let chosen = choose_direction(config, grads.columns, g_val, l_val_shifted, step)?;

    state.feature.descend(config.eta, &chosen.d)?;
    state.marginal = Some(grads.marginal);
    state.update_auxiliaries(
        &src,
        &tgt,
        config.aux_eta(),
        config.beta_soft_label,
        config.refine,
    )?;
    if !state.is_finite() {
        return Err(Error::NumericAbort {
            step,
            reason: "parameters became non-finite".into(),
        });
    }

    let (acc_raw, acc_refined) = if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
        let (a, b) = evaluate(state)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let [l_s, l_d, l_t] = grads.losses;
    Ok(StepTrace {
        step,
        l_s,
        l_d,
        l_t,
        l_val_shifted,
        w: chosen.w,
        gamma: chosen.gamma,
        mode: chosen.mode,
        slacks: chosen.slacks,
        d_norm: chosen.d.norm(),
        acc_raw,
        acc_refined,
        fallback: chosen.fallback,
        theorem_branch: chosen.theorem_branch,
        residual: chosen.residual,
    })
}

/// Runs the full loop on explicit training data.
///
/// Held-out data is reachable only through `guidance`; accuracy is measured
/// by `evaluate`, which the loop never feeds back into training.
pub fn run_da(
    config: &TrainConfig,
    data: &TrainingData<'_>,
    guidance: &mut dyn GuidanceSource,
    evaluate: &Evaluator<'_>,
) -> Result<DaRun> {
    config.validate()?;
    let mut state = ModelState::init(&config.model, data.source.features().cols(), data.classes, config.seed)?;
    let mut sampler = Sampler::new(config.seed);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let record = one_step(config, data, guidance, evaluate, &mut state, &mut sampler, step).map_err(|e| match e {
            Error::NonFinite(what) => Error::NumericAbort {
                step,
                reason: format!("non-finite value in {what}"),
            },
            other => other,
        })?;
        trace.push(record);
    }
    Ok(DaRun { state, trace })
}

/// Supervised reference: θ and φ_c trained on oracle-labelled target data.
///
/// This reads the oracle labels and is never a contender in comparisons.
pub fn ideal_supervised_run(config: &TrainConfig) -> Result<DaRun> {
    config.validate()?;
    let scenario = config.scenario.build(config.seed)?;
    let labelled = Batch::source(
        scenario.target_train.features().clone(),
        scenario.oracle().train().to_vec(),
    )?;
    let evaluate = scenario_evaluator(&scenario);
    let mut state = ModelState::init(&config.model, labelled.features().cols(), scenario.classes, config.seed)?;
    let mut sampler = Sampler::new(config.seed);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sampler.draw(&labelled, config.batch_size);
        let labels = batch.labels().expect("labelled");
        let fwd = state.forward(batch.features())?;
        let (loss, g_theta, g_cls) = state.source_gradients(&fwd, labels)?;
        finite_or_abort(step, "target cross-entropy", loss)?;
        state.feature.descend(config.eta, &g_theta)?;
        state.classifier.descend(config.aux_eta(), &g_cls)?;
        let (acc_raw, acc_refined) = if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
            let (a, b) = evaluate(&state)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        trace.push(StepTrace {
            step,
            l_s: loss,
            l_d: 0.0,
            l_t: 0.0,
            l_val_shifted: 0.0,
            w: vec![1.0, 0.0, 0.0],
            gamma: 0.0,
            mode: "oracle".into(),
            slacks: Vec::new(),
            d_norm: g_theta.norm(),
            acc_raw,
            acc_refined,
            fallback: "none".into(),
            theorem_branch: None,
            residual: None,
        });
    }
    Ok(DaRun { state, trace })
}

#[cfg(test)]
mod tests;
