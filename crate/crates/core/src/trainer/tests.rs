use rand::seq::index;
use rand::Rng;

use super::*;
use crate::diffnet::{finite_diff_gradient, relative_error, Matrix, Mlp};
use crate::dirsolve::DescentMode;
use crate::losses::{classwise_disc_loss, soft_label_weights, Domain, SoftLabelWeights};
use crate::pareto::LossPoint;
use crate::scenarios::{toy_front_samples, toy_nonconvex};

fn small_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        steps: 5,
        batch_size: 16,
        eta: 0.1,
        model: ModelArch {
            hidden: vec![8],
            feature_dim: 4,
            disc_hidden: 4,
            ..ModelArch::default()
        },
        scenario: ScenarioSpec::TwoMoons {
            n_per_domain: 80,
            rotation_degrees: 30.0,
            noise_sd: 0.1,
            heldout_fraction: 0.1,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_returns_the_initial_state() {
    let mut cfg = small_config(Method::Paretoda);
    cfg.steps = 0;
    let run = train_da(&cfg).unwrap();
    assert!(run.trace.is_empty());
    let sc = cfg.scenario.build(cfg.seed).unwrap();
    let init = ModelState::init(&cfg.model, 2, sc.classes, cfg.seed).unwrap();
    assert_eq!(run.state, init);
}

#[test]
fn runs_are_deterministic() {
    for method in [Method::Paretoda, Method::Linear, Method::Mean, Method::Mgda] {
        let cfg = small_config(method);
        let a = train_da(&cfg).unwrap();
        let b = train_da(&cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace.len(), 5);
        for t in &a.trace {
            assert!((t.w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(t.acc_raw.is_some());
        }
    }
    let mut cfg = small_config(Method::Paretoda);
    let a = train_da(&cfg).unwrap();
    cfg.seed = 1;
    assert_ne!(a.trace, train_da(&cfg).unwrap().trace);
}

#[test]
fn one_step_equals_the_manual_composition() {
    let mut cfg = small_config(Method::Paretoda);
    cfg.steps = 1;
    let run = train_da(&cfg).unwrap();

    let sc = cfg.scenario.build(cfg.seed).unwrap();
    let mut state = ModelState::init(&cfg.model, 2, sc.classes, cfg.seed).unwrap();
    let mut r = rng::child(cfg.seed, streams::BATCHES);
    let mut pick = |b: &Batch| {
        let mut idx = index::sample(&mut r, b.len(), cfg.batch_size).into_vec();
        idx.sort_unstable();
        b.select(&idx)
    };
    let src = pick(&sc.source);
    let tgt = pick(&sc.target_train);
    let fs = state.forward(src.features()).unwrap();
    let ft = state.forward(tgt.features()).unwrap();
    let (_, g1) = state.source_objective(&fs, src.labels().unwrap()).unwrap();
    let (_, g2) = state.adversarial_objective(&fs, &ft, AlignmentForm::Confusion).unwrap();
    let g3 = state.tcm_forward(&ft, &MarginalEstimate::BatchMean, true).unwrap();
    // held-out set (8 rows) is smaller than the batch, so it is used whole
    let (lv, gv) = validation_guidance(&sc.target_heldout, &state, true).unwrap();
    let bundle = GradientBundle::new(vec![g1, g2, g3.grad_feature], gv, lv).unwrap();
    let gram = compute_gram(&bundle).unwrap();
    let mode = select_mode(lv, cfg.epsilon).unwrap();
    let outcome = solve_paretoda_lp(&gram, mode).unwrap();
    let d = compose_direction(&bundle, &outcome).unwrap();
    state.feature.descend(cfg.eta, &d).unwrap();
    state.marginal = Some(g3.loss.marginal);
    state.update_auxiliaries(&src, &tgt, cfg.eta, cfg.beta_soft_label, true).unwrap();

    assert_eq!(run.state, state);
    assert_eq!(run.trace[0].w, outcome.weights.as_slice());
    assert_eq!(run.trace[0].mode, mode.as_str());
    assert_eq!(mode, DescentMode::GuidanceDescent);
}

#[test]
fn every_paretoda_step_is_checked() {
    let mut cfg = small_config(Method::Paretoda);
    cfg.steps = 40;
    for alignment in [Alignment::Adversarial, Alignment::Mmd] {
        cfg.alignment = alignment;
        let run = train_da(&cfg).unwrap();
        for t in &run.trace {
            assert!(t.theorem_branch.is_some());
            assert!(t.residual.unwrap() < RESIDUAL_TOL);
        }
    }
}

#[test]
fn linear_weights_follow_the_config() {
    let mut cfg = small_config(Method::Linear);
    cfg.linear_weights = vec![2.0, 1.0, 1.0];
    let run = train_da(&cfg).unwrap();
    assert_eq!(run.trace[0].w, vec![0.5, 0.25, 0.25]);
    assert_eq!(run.trace[0].mode, "baseline");
    cfg.linear_weights = vec![1.0, -1.0, 0.0];
    assert!(train_da(&cfg).is_err());
}

#[test]
fn config_validation_names_the_field() {
    let check = |f: fn(&mut TrainConfig), field: &str| {
        let mut c = TrainConfig::default();
        f(&mut c);
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains(field), "{e}");
    };
    check(|c| c.eta = 0.0, "eta");
    check(|c| c.batch_size = 0, "batch_size");
    check(|c| c.ema_decay = 1.0, "ema_decay");
    check(|c| c.scale_factors = [0.0, 1.0], "scale_factors");
    check(|c| c.beta_soft_label = -1.0, "beta_soft_label");
    check(|c| c.schema_version = 2, "schema_version");
    check(|c| c.aux_eta = Some(-1.0), "aux_eta");
    assert!(TrainConfig::default().validate().is_ok());
    let parsed: TrainConfig = serde_json::from_str(r#"{"method":"mgda","steps":3}"#).unwrap();
    assert_eq!(parsed.method, Method::Mgda);
    assert_eq!(parsed.ema_decay, 0.9);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"method":"mgda","stepz":3}"#).is_err());
}

fn model_and_batches(seed: u64) -> (ModelState, Batch, Batch) {
    let cfg = small_config(Method::Paretoda);
    let sc = cfg.scenario.build(seed).unwrap();
    let state = ModelState::init(&cfg.model, 2, 2, seed).unwrap();
    let src = sc.source.select(&(0..6).collect::<Vec<_>>());
    let tgt = sc.target_train.select(&(0..5).collect::<Vec<_>>());
    (state, src, tgt)
}

fn with_theta(state: &ModelState, p: &ParamVector) -> ModelState {
    let mut s = state.clone();
    s.feature.set_params(p.clone()).unwrap();
    s
}

fn fd_ok(f: impl Fn(&ParamVector) -> f64, at: &ParamVector, analytic: &ParamVector) {
    let num = finite_diff_gradient(f, at, 1e-6).unwrap();
    let rel = relative_error(analytic.as_slice(), num.as_slice());
    assert!(rel < 1e-4, "relative error {rel:e}");
}

#[test]
fn feature_extractor_gradients_match_finite_differences() {
    for seed in 0..20 {
        let (state, src, tgt) = model_and_batches(seed);
        let theta = state.feature.params().clone();
        let labels = src.labels().unwrap();
        let fs = state.forward(src.features()).unwrap();
        let ft = state.forward(tgt.features()).unwrap();

        let (_, g) = state.source_objective(&fs, labels).unwrap();
        fd_ok(
            |p| {
                let s = with_theta(&state, p);
                s.source_objective(&s.forward(src.features()).unwrap(), labels).unwrap().0
            },
            &theta,
            &g,
        );
        for form in [AlignmentForm::Confusion, AlignmentForm::Negated] {
            let (_, g) = state.adversarial_objective(&fs, &ft, form).unwrap();
            fd_ok(
                |p| {
                    let s = with_theta(&state, p);
                    let (a, b) = (s.forward(src.features()).unwrap(), s.forward(tgt.features()).unwrap());
                    s.adversarial_objective(&a, &b, form).unwrap().0
                },
                &theta,
                &g,
            );
        }
        let bw = [0.5, 2.0];
        let (_, g) = state.mmd_objective(&fs, &ft, &bw, MmdEstimator::Biased).unwrap();
        fd_ok(
            |p| {
                let s = with_theta(&state, p);
                let (a, b) = (s.forward(src.features()).unwrap(), s.forward(tgt.features()).unwrap());
                s.mmd_objective(&a, &b, &bw, MmdEstimator::Biased).unwrap().0
            },
            &theta,
            &g,
        );
        let ema = MarginalEstimate::Ema {
            previous: vec![0.3, 0.7],
            decay: 0.9,
        };
        for refine in [true, false] {
            let g = state.tcm_forward(&ft, &ema, refine).unwrap().grad_feature;
            fd_ok(
                |p| with_theta(&state, p).tcm_objective(&tgt, &ema, refine).unwrap().loss.raw,
                &theta,
                &g,
            );
        }
    }
}

#[test]
fn auxiliary_updates() {
    let (state, src, tgt) = model_and_batches(3);
    let eta = 0.1;

    let mut a = state.clone();
    a.update_auxiliaries(&src, &tgt, eta, 1.0, true).unwrap();
    let mut b = state.clone();
    b.update_auxiliaries(&src, &tgt, eta, 1.0, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.feature, state.feature);

    // β = 0: φ_c moves along −η ∇L_S only
    let mut c = state.clone();
    c.update_auxiliaries(&src, &tgt, eta, 0.0, true).unwrap();
    let fwd = state.forward(src.features()).unwrap();
    let (_, _, g_cls) = state.source_gradients(&fwd, src.labels().unwrap()).unwrap();
    let mut expected = state.classifier.clone();
    expected.descend(eta, &g_cls).unwrap();
    assert_eq!(c.classifier, expected);

    // v_k step equals −η times the finite-difference gradient of the class-wise loss with ρ frozen
    let ft = state.forward(tgt.features()).unwrap();
    let rho = state.target_posterior(&ft, true).unwrap();
    let s_src = soft_label_weights(&src, None, 2).unwrap();
    let s_tgt = soft_label_weights(&tgt, Some(&rho), 2).unwrap();
    let mut s_rows = s_src.0.to_rows();
    s_rows.extend(s_tgt.0.to_rows());
    let s = SoftLabelWeights(Matrix::from_rows(&s_rows).unwrap());
    let mut domains = vec![Domain::Source; src.len()];
    domains.extend(vec![Domain::Target; tgt.len()]);
    let mut x_rows = src.features().to_rows();
    x_rows.extend(tgt.features().to_rows());
    let x = Matrix::from_rows(&x_rows).unwrap();
    for k in 0..2 {
        let f = |p: &ParamVector| {
            let mut st = state.clone();
            st.classwise[k] = Mlp::from_params(st.classwise[k].shape().clone(), p.clone()).unwrap();
            let probs = st.forward(&x).unwrap().classwise_probs;
            classwise_disc_loss(&s, &domains, &probs).unwrap().0
        };
        let before = state.classwise[k].params();
        let after = a.classwise[k].params();
        let analytic =
            ParamVector::from_vec(before.as_slice().iter().zip(after.as_slice()).map(|(p, q)| (p - q) / eta).collect());
        fd_ok(f, before, &analytic);
    }
}

#[test]
fn accuracy_examples() {
    let truth: Vec<usize> = (0..100).map(|i| i % 2).collect();
    assert_eq!(accuracy(&truth, &truth).unwrap(), 1.0);
    let n = 20000;
    let mut r = rng::child(0, 701);
    let coin: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
    let truth: Vec<usize> = (0..n).map(|i| i % 2).collect();
    assert!((accuracy(&coin, &truth).unwrap() - 0.5).abs() < 3.0 / (n as f64).sqrt());
    assert!(accuracy(&[0], &[0, 1]).is_err());

    // constant class-wise discriminators leave the classifier's ranking untouched
    let cfg = small_config(Method::Paretoda);
    let sc = cfg.scenario.build(0).unwrap();
    let mut state = ModelState::init(&cfg.model, 2, 2, 0).unwrap();
    for v in &mut state.classwise {
        let zeros = ParamVector::zeros(v.params().len());
        v.set_params(zeros).unwrap();
    }
    let raw = evaluate_target_accuracy(&state, &sc, false).unwrap();
    let refined = evaluate_target_accuracy(&state, &sc, true).unwrap();
    assert_eq!(raw, refined);
}

#[test]
fn ideal_run_contract() {
    let mut cfg = small_config(Method::Paretoda);
    cfg.steps = 0;
    assert!(ideal_supervised_run(&cfg).unwrap().trace.is_empty());
    cfg.steps = 3;
    let a = ideal_supervised_run(&cfg).unwrap();
    let b = ideal_supervised_run(&cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert!(a.trace.iter().all(|t| t.mode == "oracle"));
    let sc = cfg.scenario.build(cfg.seed).unwrap();
    let init = ModelState::init(&cfg.model, 2, 2, cfg.seed).unwrap();
    assert_eq!(a.state.discriminator, init.discriminator);
    assert_ne!(a.state.feature, init.feature);
    let acc = evaluate_target_accuracy(&a.state, &sc, false).unwrap();
    assert_eq!(a.trace[2].acc_raw, Some(acc));
}

#[test]
fn toy_mgda_from_the_symmetric_point_stays_put() {
    let p = toy_nonconvex(3).unwrap();
    let front = toy_front_samples(&p, 201).unwrap();
    let path = train_toy(&p, &ToyMethod::Mgda, &ParamVector::zeros(3), 0.05, 50, &front).unwrap();
    assert!(path.final_theta.as_slice().iter().all(|v| v.abs() < 1e-12));
    assert_eq!(path.points.len(), 51);
}

#[test]
fn toy_linear_on_one_objective_reaches_its_minimiser() {
    let p = toy_nonconvex(20).unwrap();
    let front = toy_front_samples(&p, 4001).unwrap();
    let mut r = rng::child(0, 702);
    let init = ParamVector::from_vec((0..20).map(|_| r.random_range(-0.5..0.5)).collect());
    let path = train_toy(&p, &ToyMethod::Linear([1.0, 0.0]), &init, 0.05, 2000, &front).unwrap();
    let target = p.front_point(1.0);
    let err: f64 = path.final_theta.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3);
    assert!(path.front_distance < 1e-3);
    let end = LossPoint::new(vec![0.0, 1.0 - (-4f64).exp()]).unwrap();
    assert!(path.points.last().unwrap().distance(&end) < 1e-3);
}

#[test]
fn toy_mgda_ends_on_the_front() {
    let p = toy_nonconvex(20).unwrap();
    let front = toy_front_samples(&p, 4001).unwrap();
    let mut r = rng::child(0, 703);
    for _ in 0..50 {
        let init = ParamVector::from_vec((0..20).map(|_| r.random_range(-0.5..0.5)).collect());
        let path = train_toy(&p, &ToyMethod::Mgda, &init, 0.05, 2000, &front).unwrap();
        assert!(path.front_distance < 1e-3, "{}", path.front_distance);
    }
    let init = ParamVector::from_vec((0..20).map(|_| r.random_range(-0.5..0.5)).collect());
    for method in [ToyMethod::Mean, ToyMethod::ParetoLike { guidance: 0 }] {
        let path = train_toy(&p, &method, &init, 0.05, 200, &front).unwrap();
        assert_eq!(path.points.len(), 201);
    }
    assert!(train_toy(&p, &ToyMethod::ParetoLike { guidance: 2 }, &init, 0.05, 1, &front).is_err());
}
