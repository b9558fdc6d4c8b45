use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::mmd::mmd_unchecked;
use super::*;
use crate::diffnet::{finite_diff_gradient, relative_error, sigmoid, softmax};
use crate::rng;
use crate::trainer::{ModelArch, ModelState};

const FD_H: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn normal_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

fn softmax_rows(logits: &[f64], k: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = logits.chunks(k).map(|c| softmax(c).unwrap()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn sigmoid_mat(logits: &[f64], k: usize) -> Matrix {
    Matrix::from_vec(logits.len() / k, k, logits.iter().map(|&z| sigmoid(z)).collect()).unwrap()
}

fn fd_ok(f: impl Fn(&ParamVector) -> f64, at: &[f64], analytic: &[f64]) {
    let numeric = finite_diff_gradient(f, &ParamVector::from_vec(at.to_vec()), FD_H).unwrap();
    let rel = relative_error(analytic, numeric.as_slice());
    assert!(rel < FD_TOL, "relative error {rel:e}\nanalytic {analytic:?}\nnumeric  {:?}", numeric.as_slice());
}

#[test]
fn source_ce_examples() {
    let (l, _) = source_ce_loss(&m(&[&[0.5, 0.5]]), &[1]).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-12);
    let (l, g) = source_ce_loss(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.as_slice().iter().all(|v| *v == 0.0));
    let (l, g) = source_ce_loss(&m(&[&[0.8, 0.2]]), &[1]).unwrap();
    assert!((l - 1.6094379124341003).abs() < 1e-12);
    assert!((g.get(0, 0) - 0.8).abs() < 1e-15 && (g.get(0, 1) + 0.8).abs() < 1e-15);
    assert!(source_ce_loss(&Matrix::zeros(0, 2), &[]).is_err());
    assert!(source_ce_loss(&m(&[&[0.5, 0.5]]), &[2]).is_err());
}

#[test]
fn source_ce_gradient_matches_finite_differences() {
    let (n, k) = (5, 3);
    for point in 0..20 {
        let mut r = rng::child(point, 501);
        let z = normal_vec(&mut r, n * k);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let (_, g) = source_ce_loss(&softmax_rows(&z, k), &labels).unwrap();
        // direct log-sum-exp evaluation
        let f = |p: &ParamVector| {
            let z = p.as_slice();
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = &z[i * k..(i + 1) * k];
                let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                total += lse - row[y];
            }
            total / n as f64
        };
        fd_ok(f, &z, g.as_slice());
    }
}

#[test]
fn domain_disc_examples() {
    let l = domain_disc_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    assert!(l.loss < 1e-11);
    let l = domain_disc_loss(&[0.5; 3], &[0.5; 4]).unwrap();
    assert!((l.loss - 2f64.ln()).abs() < 1e-12);
    let l = domain_disc_loss(&[0.25], &[0.75]).unwrap();
    assert!((l.loss - 0.2876820724517809).abs() < 1e-12);
    assert!(domain_disc_loss(&[], &[0.5]).is_err());
}

fn binary_fd(loss: impl Fn(&[f64], &[f64]) -> BinaryLoss) {
    for point in 0..20 {
        let mut r = rng::child(point, 502);
        let (ns, nt) = (4, 3);
        let z = normal_vec(&mut r, ns + nt);
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let l = loss(&p[..ns], &p[ns..]);
        let mut analytic = l.grad_source.clone();
        analytic.extend(&l.grad_target);
        let f = |q: &ParamVector| {
            let p: Vec<f64> = q.as_slice().iter().map(|&v| sigmoid(v)).collect();
            loss(&p[..ns], &p[ns..]).loss
        };
        fd_ok(f, &z, &analytic);
    }
}

#[test]
fn discriminator_and_alignment_gradients_match_finite_differences() {
    binary_fd(|s, t| domain_disc_loss(s, t).unwrap());
    binary_fd(|s, t| feature_alignment_loss(s, t, AlignmentForm::Confusion).unwrap());
    binary_fd(|s, t| feature_alignment_loss(s, t, AlignmentForm::Negated).unwrap());
}

#[test]
fn alignment_examples() {
    let l = feature_alignment_loss(&[0.5, 0.5], &[0.5], AlignmentForm::Confusion).unwrap();
    assert!((l.loss - 2f64.ln()).abs() < 1e-12);
    // a discriminator stuck at one logit c on both sides is best confused at c = 0
    let at = |c: f64| feature_alignment_loss(&[sigmoid(c)], &[sigmoid(c)], AlignmentForm::Confusion).unwrap().loss;
    for c in [-1.0, -0.1, -1e-3, 1e-3, 0.1, 1.0] {
        assert!(at(0.0) < at(c));
    }
    let l = feature_alignment_loss(&[0.0], &[1.0], AlignmentForm::Confusion).unwrap();
    assert!(l.loss >= 1e12f64.ln() - 1e-9);
    let neg = feature_alignment_loss(&[0.3], &[0.6], AlignmentForm::Negated).unwrap();
    let disc = domain_disc_loss(&[0.3], &[0.6]).unwrap();
    assert_eq!(neg.loss, -disc.loss);
}

#[test]
fn mmd_examples() {
    let a = m(&[&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5]]);
    let l = mmd_loss(&a, &a, &[1.0, 2.0], MmdEstimator::Biased).unwrap();
    assert!(l.loss.abs() < 1e-12);
    let l = mmd_unchecked(&m(&[&[0.0]]), &m(&[&[2.0]]), &[1.0], MmdEstimator::Biased);
    assert!((l.loss - (2.0 - 2.0 * (-2f64).exp())).abs() < 1e-12);
    assert!((l.loss - 1.7293).abs() < 1e-4);
    let b = m(&[&[1.0, 1.0], &[0.0, 0.0], &[3.0, 0.0]]);
    let shuffled = m(&[&[0.5, 0.5], &[0.0, 1.0], &[2.0, -1.0]]);
    for est in [MmdEstimator::Biased, MmdEstimator::Unbiased] {
        let x = mmd_loss(&a, &b, &[1.0], est).unwrap().loss;
        let y = mmd_loss(&shuffled, &b, &[1.0], est).unwrap().loss;
        assert!((x - y).abs() < 1e-12);
    }
    assert!(mmd_loss(&m(&[&[0.0]]), &a, &[1.0], MmdEstimator::Biased).is_err());
    assert!(mmd_loss(&a, &b, &[0.0], MmdEstimator::Biased).is_err());
}

#[test]
fn mmd_gradient_matches_finite_differences() {
    for est in [MmdEstimator::Biased, MmdEstimator::Unbiased] {
        for point in 0..20 {
            let mut r = rng::child(point, 503);
            let (ns, nt, p) = (4, 3, 2);
            let x = normal_vec(&mut r, (ns + nt) * p);
            let split = |v: &[f64]| {
                (
                    Matrix::from_vec(ns, p, v[..ns * p].to_vec()).unwrap(),
                    Matrix::from_vec(nt, p, v[ns * p..].to_vec()).unwrap(),
                )
            };
            let (s, t) = split(&x);
            let l = mmd_loss(&s, &t, &[0.5, 2.0], est).unwrap();
            let mut analytic = l.grad_source.as_slice().to_vec();
            analytic.extend(l.grad_target.as_slice());
            // direct kernel sums
            let f = |q: &ParamVector| {
                let (s, t) = split(q.as_slice());
                let k = |a: &[f64], b: &[f64]| {
                    let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
                    (-d2 / 0.5).exp() + (-d2 / 8.0).exp()
                };
                let within = |x: &Matrix| {
                    let n = x.rows();
                    let mut sum = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            if i != j || est == MmdEstimator::Biased {
                                sum += k(x.row(i), x.row(j));
                            }
                        }
                    }
                    match est {
                        MmdEstimator::Biased => sum / (n * n) as f64,
                        MmdEstimator::Unbiased => sum / (n * (n - 1)) as f64,
                    }
                };
                let mut cross = 0.0;
                for i in 0..ns {
                    for j in 0..nt {
                        cross += k(s.row(i), t.row(j));
                    }
                }
                within(&s) + within(&t) - 2.0 * cross / (ns * nt) as f64
            };
            fd_ok(f, &x, &analytic);
        }
    }
}

#[test]
fn bayes_refine_examples() {
    let r = bayes_refine(&m(&[&[0.6, 0.4]]), &m(&[&[0.9, 0.1]]), Domain::Target).unwrap();
    assert!((r.rho.get(0, 0) - 27.0 / 29.0).abs() < 1e-12);
    assert!((r.rho.get(0, 1) - 2.0 / 29.0).abs() < 1e-12);
    // d = 0 uses the complement: 0.6·0.1 : 0.4·0.9
    let r = bayes_refine(&m(&[&[0.6, 0.4]]), &m(&[&[0.9, 0.1]]), Domain::Source).unwrap();
    assert!((r.rho.get(0, 0) - 0.06 / 0.42).abs() < 1e-12);
    let c = m(&[&[0.2, 0.3, 0.5], &[0.7, 0.1, 0.2]]);
    let r = bayes_refine(&c, &m(&[&[0.3, 0.3, 0.3], &[0.8, 0.8, 0.8]]), Domain::Target).unwrap();
    for (a, b) in r.rho.as_slice().iter().zip(c.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
    let r = bayes_refine(&m(&[&[1.0, 0.0]]), &m(&[&[0.01, 0.99]]), Domain::Target).unwrap();
    assert_eq!(r.rho.row(0), &[1.0, 0.0]);
    let r = bayes_refine(&m(&[&[1.0, 0.0], &[0.5, 0.5]]), &m(&[&[0.0, 0.5], &[0.5, 0.5]]), Domain::Target).unwrap();
    assert_eq!(r.fallback_rows, vec![0]);
    assert_eq!(r.rho.row(0), &[1.0, 0.0]);
    assert!(bayes_refine(&m(&[&[0.5, 0.5]]), &m(&[&[0.5, 0.5, 0.5]]), Domain::Target).is_err());
}

/// Random classifier and discriminator logits for `n` rows and `k` classes.
fn chain_point(point: u64, stream: u64, n: usize, k: usize) -> Vec<f64> {
    normal_vec(&mut rng::child(point, stream), 2 * n * k)
}

#[test]
fn bayes_refine_backward_matches_finite_differences() {
    let (n, k) = (3, 4);
    for d in [Domain::Target, Domain::Source] {
        for point in 0..20 {
            let x = chain_point(point, 504, n, k);
            let weights = normal_vec(&mut rng::child(point, 505), n * k);
            let eval = |x: &[f64]| {
                let c = softmax_rows(&x[..n * k], k);
                let q = sigmoid_mat(&x[n * k..], k);
                (bayes_refine(&c, &q, d).unwrap(), c, q)
            };
            let (r, c, q) = eval(&x);
            let g_rho = Matrix::from_vec(n, k, weights.clone()).unwrap();
            let (gc, gq) = bayes_refine_backward(&c, &q, &r, &g_rho).unwrap();
            // chain through softmax and sigmoid by hand
            let mut analytic = Vec::new();
            for i in 0..n {
                let row = c.row(i);
                let centre: f64 = (0..k).map(|j| gc.get(i, j) * row[j]).sum();
                analytic.extend((0..k).map(|j| row[j] * (gc.get(i, j) - centre)));
            }
            analytic.extend(gq.as_slice().iter().zip(q.as_slice()).map(|(g, p)| g * p * (1.0 - p)));
            let f = |p: &ParamVector| {
                let r = eval(p.as_slice()).0;
                r.rho.as_slice().iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            fd_ok(f, &x, &analytic);
        }
    }
}

#[test]
fn soft_label_examples() {
    let src = Batch::source(m(&[&[0.0], &[1.0]]), vec![0, 1]).unwrap();
    let s = soft_label_weights(&src, None, 2).unwrap();
    assert_eq!(s.0, m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let tgt = Batch::target(m(&[&[0.0], &[1.0]])).unwrap();
    let r = bayes_refine(&m(&[&[0.3, 0.7], &[0.9, 0.1]]), &m(&[&[0.5, 0.5], &[0.2, 0.6]]), Domain::Target).unwrap();
    let s = soft_label_weights(&tgt, Some(&r), 2).unwrap();
    assert_eq!(s.0, r.rho);
    assert!(soft_label_weights(&tgt, None, 2).is_err());
    assert!(soft_label_weights(&src, Some(&r), 2).is_err());
}

#[test]
fn batch_contract() {
    assert!(Batch::source(Matrix::zeros(0, 2), vec![]).is_err());
    assert!(Batch::source(m(&[&[0.0]]), vec![0, 1]).is_err());
    assert!(Batch::target(Matrix::zeros(0, 2)).is_err());
    let b = Batch::target(m(&[&[1.0], &[2.0]])).unwrap();
    assert!(b.labels().is_none());
    assert_eq!(b.domain().label(), 1);
}

#[test]
fn classwise_examples() {
    let s = SoftLabelWeights(m(&[&[1.0, 0.0]]));
    let (l, g) = classwise_disc_loss(&s, &[Domain::Source], &m(&[&[0.2, 0.9]])).unwrap();
    assert!((l - 0.8f64.ln().abs()).abs() < 1e-12);
    assert_eq!(g.get(0, 1), 0.0);
    let zero = SoftLabelWeights(Matrix::zeros(2, 2));
    let (l, g) = classwise_disc_loss(&zero, &[Domain::Source, Domain::Target], &m(&[&[0.2, 0.9], &[0.4, 0.3]])).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.as_slice().iter().all(|v| *v == 0.0));
    let s = SoftLabelWeights(m(&[&[0.5, 0.5], &[0.3, 0.7]]));
    let (l, _) = classwise_disc_loss(&s, &[Domain::Source, Domain::Target], &m(&[&[0.0, 0.0], &[1.0, 1.0]])).unwrap();
    assert!(l < 1e-11);
}

#[test]
fn classwise_gradient_matches_finite_differences() {
    let (n, k) = (5, 3);
    for point in 0..20 {
        let mut r = rng::child(point, 506);
        let z = normal_vec(&mut r, n * k);
        let s = SoftLabelWeights(softmax_rows(&normal_vec(&mut r, n * k), k));
        let domains: Vec<Domain> = (0..n).map(|i| if i % 2 == 0 { Domain::Source } else { Domain::Target }).collect();
        let (_, g) = classwise_disc_loss(&s, &domains, &sigmoid_mat(&z, k)).unwrap();
        let f = |p: &ParamVector| {
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..k {
                    let q = sigmoid(p.as_slice()[i * k + j]);
                    let lik = if domains[i] == Domain::Target { q } else { 1.0 - q };
                    total -= s.0.get(i, j) * lik.ln();
                }
            }
            total / n as f64
        };
        fd_ok(f, &z, g.as_slice());
    }
}

fn posterior(rows: &[&[f64]]) -> RefinedPosterior {
    RefinedPosterior {
        rho: m(rows),
        conditioning: Domain::Target,
        fallback_rows: vec![],
    }
}

#[test]
fn tcm_examples() {
    let l = tcm_loss(&posterior(&[&[1.0, 0.0], &[1.0, 0.0]]), &MarginalEstimate::BatchMean).unwrap();
    assert_eq!(l.raw, 0.0);
    assert!((l.shifted - 2f64.ln()).abs() < 1e-15);
    let l = tcm_loss(&posterior(&[&[1.0, 0.0], &[0.0, 1.0]]), &MarginalEstimate::BatchMean).unwrap();
    assert!((l.raw + 2f64.ln()).abs() < 1e-12);
    assert!(l.shifted.abs() < 1e-12);
    let third = 1.0 / 3.0;
    let l = tcm_loss(&posterior(&[&[third; 3], &[third; 3]]), &MarginalEstimate::BatchMean).unwrap();
    assert!(l.raw.abs() < 1e-12);
    let ema = MarginalEstimate::Ema {
        previous: vec![0.2, 0.8],
        decay: 0.9,
    };
    let l = tcm_loss(&posterior(&[&[1.0, 0.0], &[1.0, 0.0]]), &ema).unwrap();
    assert!((l.marginal[0] - 0.28).abs() < 1e-12);
    assert!(tcm_loss(&posterior(&[&[1.0, 0.0]]), &MarginalEstimate::Ema { previous: vec![0.5, 0.5], decay: 1.0 }).is_err());
}

#[test]
fn tcm_gradient_through_refinement_matches_finite_differences() {
    let (n, k) = (4, 3);
    let marginals = [
        MarginalEstimate::BatchMean,
        MarginalEstimate::Ema {
            previous: vec![0.5, 0.3, 0.2],
            decay: 0.9,
        },
    ];
    for marginal in &marginals {
        for point in 0..20 {
            let x = chain_point(point, 507, n, k);
            let eval = |x: &[f64]| {
                let c = softmax_rows(&x[..n * k], k);
                let q = sigmoid_mat(&x[n * k..], k);
                let r = bayes_refine(&c, &q, Domain::Target).unwrap();
                (tcm_loss(&r, marginal).unwrap(), r, c, q)
            };
            let (l, r, c, q) = eval(&x);
            let (gc, gq) = bayes_refine_backward(&c, &q, &r, &l.grad_rho).unwrap();
            let mut analytic = Vec::new();
            for i in 0..n {
                let row = c.row(i);
                let centre: f64 = (0..k).map(|j| gc.get(i, j) * row[j]).sum();
                analytic.extend((0..k).map(|j| row[j] * (gc.get(i, j) - centre)));
            }
            analytic.extend(gq.as_slice().iter().zip(q.as_slice()).map(|(g, p)| g * p * (1.0 - p)));
            // Independent value: entropies written out from ρ directly
            let f = |p: &ParamVector| {
                let rho = eval(p.as_slice()).1.rho;
                let mut mean = vec![0.0; k];
                let mut ent = 0.0;
                for i in 0..n {
                    for j in 0..k {
                        let v = rho.get(i, j);
                        mean[j] += v / n as f64;
                        ent -= v * v.ln() / n as f64;
                    }
                }
                let marg: Vec<f64> = match marginal {
                    MarginalEstimate::BatchMean => mean,
                    MarginalEstimate::Ema { previous, decay } => {
                        previous.iter().zip(&mean).map(|(a, b)| decay * a + (1.0 - decay) * b).collect()
                    }
                };
                marg.iter().map(|v| v * v.ln()).sum::<f64>() + ent
            };
            fd_ok(f, &x, &analytic);
        }
    }
}

fn small_model(seed: u64) -> ModelState {
    let arch = ModelArch {
        hidden: vec![5],
        feature_dim: 4,
        disc_hidden: 3,
        ..ModelArch::default()
    };
    ModelState::init(&arch, 2, 3, seed).unwrap()
}

#[test]
fn validation_guidance_matches_finite_differences() {
    for point in 0..20 {
        let model = small_model(point);
        let x = Matrix::from_vec(6, 2, normal_vec(&mut rng::child(point, 508), 12)).unwrap();
        let heldout = Batch::target(x).unwrap();
        let (l, g) = validation_guidance(&heldout, &model, true).unwrap();
        assert!((-1e-12..=3f64.ln() + 1e-12).contains(&l));
        let f = |p: &ParamVector| {
            let mut m = model.clone();
            m.feature.set_params(p.clone()).unwrap();
            validation_guidance(&heldout, &m, true).unwrap().0
        };
        fd_ok(f, model.feature.params().as_slice(), g.as_slice());
        let (l2, g2) = validation_guidance(&heldout, &model, true).unwrap();
        assert_eq!((l, &g), (l2, &g2));
    }
    let model = small_model(0);
    let src = Batch::source(Matrix::zeros(2, 2), vec![0, 1]).unwrap();
    assert!(validation_guidance(&src, &model, true).is_err());
}

#[test]
fn optimal_heldout_predictions_select_pure_descent() {
    // one-hot posteriors split evenly over the classes give a shifted loss of 0
    let l = tcm_loss(
        &posterior(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]),
        &MarginalEstimate::BatchMean,
    )
    .unwrap();
    assert!(l.shifted.abs() < 1e-12);
    let mode = crate::dirsolve::select_mode(l.shifted.max(0.0), crate::dirsolve::DEFAULT_EPSILON).unwrap();
    assert_eq!(mode, crate::dirsolve::DescentMode::PureDescent);
}

fn prob_matrix(n: usize, k: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (
        prop::collection::vec(-8.0f64..8.0, n * k),
        prop::collection::vec(-12.0f64..12.0, n * k),
    )
        .prop_map(move |(a, b)| (softmax_rows(&a, k), sigmoid_mat(&b, k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn refined_rows_are_distributions((c, q) in prob_matrix(3, 4), source in any::<bool>()) {
        let d = if source { Domain::Source } else { Domain::Target };
        let r = bayes_refine(&c, &q, d).unwrap();
        for i in 0..3 {
            let row = r.rho.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

proptest! {
    #[test]
    fn constant_discriminators_give_the_classifier_posterior(
        (c, _) in prob_matrix(4, 3),
        q in prop::collection::vec(1e-6f64..1.0 - 1e-6, 4),
    ) {
        let disc = Matrix::from_rows(&q.iter().map(|&v| vec![v; 3]).collect::<Vec<_>>()).unwrap();
        let r = bayes_refine(&c, &disc, Domain::Target).unwrap();
        for (a, b) in r.rho.as_slice().iter().zip(c.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tcm_raw_value_is_bounded((c, _) in prob_matrix(6, 4)) {
        let r = RefinedPosterior { rho: c, conditioning: Domain::Target, fallback_rows: vec![] };
        let l = tcm_loss(&r, &MarginalEstimate::BatchMean).unwrap();
        prop_assert!(l.raw <= 1e-12 && l.raw >= -(4f64.ln()) - 1e-12);
    }

    #[test]
    fn classwise_loss_ignores_sample_order(
        (s, q) in prob_matrix(5, 3),
        doms in prop::collection::vec(any::<bool>(), 5),
        rot in 0usize..5,
    ) {
        let domains: Vec<Domain> = doms.iter().map(|&t| if t { Domain::Target } else { Domain::Source }).collect();
        let (l, _) = classwise_disc_loss(&SoftLabelWeights(s.clone()), &domains, &q).unwrap();
        let perm: Vec<usize> = (0..5).map(|i| (i + rot) % 5).collect();
        let pd: Vec<Domain> = perm.iter().map(|&i| domains[i]).collect();
        let (l2, _) = classwise_disc_loss(&SoftLabelWeights(s.select_rows(&perm)), &pd, &q.select_rows(&perm)).unwrap();
        prop_assert!((l - l2).abs() < 1e-12);
    }

    #[test]
    fn mmd_of_a_set_with_itself_is_not_positive(x in prop::collection::vec(-3.0f64..3.0, 8..24)) {
        let n = x.len() / 2;
        let a = Matrix::from_vec(n, 2, x[..2 * n].to_vec()).unwrap();
        for est in [MmdEstimator::Biased, MmdEstimator::Unbiased] {
            prop_assert!(mmd_loss(&a, &a, &[0.5, 1.0], est).unwrap().loss <= 1e-10);
        }
    }
}
