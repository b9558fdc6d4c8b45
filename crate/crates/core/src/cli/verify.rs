//! Self-check suite behind `paretoda verify`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffnet::{finite_diff_gradient, relative_error, sigmoid, Matrix, ParamVector};
use crate::dirsolve::{
    brute_force_lp_oracle_with_slack, check_theorem1, compute_gram, constraint_floors, lp_objective, solve_min_norm,
    solve_paretoda_lp, DescentMode, DirectionOutcome, Fallback, GradientBundle, GramData, Theorem1Branch,
};
use crate::losses::{
    classwise_disc_loss, domain_disc_loss, source_ce_loss, validation_guidance, AlignmentForm, Batch, Domain,
    MarginalEstimate, MmdEstimator, SoftLabelWeights,
};
use crate::rng::{self, streams};
use crate::scenarios::make_two_moons_shift;
use crate::trainer::{ModelArch, ModelState, THEOREM_REL_TOL};
use crate::Result;

/// Grid spacing of the brute-force LP oracle.
pub const ORACLE_GRID: f64 = 1e-3;
/// Allowed shortfall of the LP objective against the oracle.
pub const ORACLE_TOL: f64 = 1e-4;
/// Largest accepted constraint violation of an LP solution.
pub const CONSTRAINT_TOL: f64 = 1e-9;
/// Largest accepted relative finite-difference error.
pub const FD_TOL: f64 = 1e-4;
/// Number of random points per gradient check.
pub const FD_POINTS: usize = 20;

const OBJECTIVES: usize = 3;
const GRADIENT_DIM: usize = 6;

/// Deliberate defects for checking that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Solve the LP with the alignment vector negated.
    NegateA,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub property: &'static str,
    pub checked: usize,
    pub failures: usize,
    /// Worst value of the checked quantity, in the units named by `detail`.
    pub worst: f64,
    pub detail: String,
}

impl VerifyRow {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(VerifyRow::passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.rows.iter().filter(|r| !r.passed()).map(|r| r.property).collect()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<32} {:>7} {:>8} {:>12}  {:<6} {}\n", "property", "checked", "failures", "worst", "result", "detail");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<32} {:>7} {:>8} {:>12.3e}  {:<6} {}",
                r.property,
                r.checked,
                r.failures,
                r.worst,
                if r.passed() { "PASS" } else { "FAIL" },
                r.detail
            );
        }
        out
    }
}

/// Three standard-normal gradients and a standard-normal guidance vector.
pub fn random_bundle(seed: u64, index: u64) -> GradientBundle {
    let mut r = rng::child_indexed(seed, streams::VERIFY, index);
    let mut col = || ParamVector::from_vec((0..GRADIENT_DIM).map(|_| r.sample::<f64, _>(StandardNormal)).collect());
    let cols = (0..OBJECTIVES).map(|_| col()).collect();
    let v = col();
    GradientBundle::new(cols, v, 0.5).expect("well-formed random bundle")
}

/// Largest violation `floor_j - (Mw)_j` of the LP's own constraint system.
pub fn constraint_violation(gram: &GramData, outcome: &DirectionOutcome) -> f64 {
    let floors = constraint_floors(
        &gram.alignment,
        &outcome.index_sets,
        outcome.mode,
        outcome.fallback == Fallback::DescentEnforced,
    );
    let mw = gram.gram_times(outcome.weights.as_slice());
    floors
        .iter()
        .zip(&mw)
        .filter_map(|(f, v)| f.map(|f| f - v))
        .fold(0.0_f64, f64::max)
}

/// Value of the LP objective at `w`.
pub fn lp_value(gram: &GramData, mode: DescentMode, w: &[f64]) -> f64 {
    lp_objective(&gram.gram, &gram.alignment, mode).iter().zip(w).map(|(c, x)| c * x).sum()
}

fn solve(bundle: &GradientBundle, mode: DescentMode, fault: Option<Fault>) -> Result<(GramData, DirectionOutcome)> {
    let gram = compute_gram(bundle)?;
    let solved_on = match fault {
        Some(Fault::NegateA) => GramData::new(gram.gram.clone(), gram.alignment.iter().map(|v| -v).collect())?,
        None => gram.clone(),
    };
    let outcome = solve_paretoda_lp(&solved_on, mode)?;
    Ok((gram, outcome))
}

fn lp_against_oracle(seed: u64, instances: usize, fault: Option<Fault>) -> Result<VerifyRow> {
    let mut row = VerifyRow {
        property: "lp_matches_oracle",
        checked: 0,
        failures: 0,
        worst: 0.0,
        detail: String::new(),
    };
    let mut skipped = 0;
    let mut worst_violation = 0.0_f64;
    for i in 0..instances {
        let bundle = random_bundle(seed, i as u64);
        for mode in [DescentMode::GuidanceDescent, DescentMode::PureDescent] {
            let (gram, outcome) = solve(&bundle, mode, fault)?;
            let oracle = brute_force_lp_oracle_with_slack(&gram, mode, ORACLE_GRID, 0.0);
            let violation = constraint_violation(&gram, &outcome);
            worst_violation = worst_violation.max(violation);
            let mut ok = violation <= CONSTRAINT_TOL;
            // a lattice without feasible points makes the oracle return the
            // uniform vector, which is not a bound on anything
            let oracle_outcome = DirectionOutcome {
                weights: oracle.clone(),
                ..outcome.clone()
            };
            if constraint_violation(&gram, &oracle_outcome) > 0.0 {
                skipped += 1;
            } else {
                let gap = lp_value(&gram, mode, oracle.as_slice()) - lp_value(&gram, mode, outcome.weights.as_slice());
                row.worst = row.worst.max(gap);
                ok &= gap <= ORACLE_TOL;
            }
            row.checked += 1;
            if !ok {
                row.failures += 1;
            }
        }
    }
    row.detail = format!(
        "oracle gap (tol {ORACLE_TOL:e}); max constraint violation {worst_violation:.1e}; {skipped} without feasible lattice point"
    );
    Ok(row)
}

fn theorem_rows(seed: u64, instances: usize, fault: Option<Fault>) -> Result<Vec<VerifyRow>> {
    let branches = [
        ("theorem1_pure", Theorem1Branch::Pure),
        ("theorem1_guidance_positive", Theorem1Branch::GuidancePositive),
        ("theorem1_guidance_nonpositive", Theorem1Branch::GuidanceNonPositive),
    ];
    let mut rows = Vec::new();
    for (b, (property, expected)) in branches.into_iter().enumerate() {
        let mut row = VerifyRow {
            property,
            checked: 0,
            failures: 0,
            worst: 0.0,
            detail: "worst |value| / tolerance among violations".into(),
        };
        let base = 1_000_000 * (b as u64 + 1);
        let mut draw = 0u64;
        while row.checked < instances {
            let mut bundle = random_bundle(seed, base + draw);
            draw += 1;
            let mode = match expected {
                Theorem1Branch::Pure => DescentMode::PureDescent,
                _ => DescentMode::GuidanceDescent,
            };
            if expected == Theorem1Branch::GuidanceNonPositive {
                // ĝ = -d_minnorm gives a_j <= -‖d_minnorm‖² for every j
                let (w, _) = solve_min_norm(&compute_gram(&bundle)?.gram);
                let mut v = ParamVector::zeros(bundle.dim());
                for (g, wj) in bundle.columns().iter().zip(w.as_slice()) {
                    v.axpy(-wj, g);
                }
                bundle = GradientBundle::new(bundle.columns().to_vec(), v, 0.5)?;
            }
            let (_, outcome) = solve(&bundle, mode, fault)?;
            if expected == Theorem1Branch::GuidancePositive && fault.is_none() && outcome.gamma_star <= 0.0 {
                if draw > 100 * instances as u64 {
                    row.failures += 1;
                    row.checked += 1;
                }
                continue;
            }
            row.checked += 1;
            match check_theorem1(&bundle, &outcome, THEOREM_REL_TOL) {
                Ok(rep) if rep.branch == expected => {}
                Ok(_) => row.failures += 1,
                Err(v) => {
                    row.failures += 1;
                    row.worst = row.worst.max(v.value.abs() / v.tolerance.max(f64::MIN_POSITIVE));
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn min_norm_row(seed: u64, instances: usize) -> Result<VerifyRow> {
    let mut row = VerifyRow {
        property: "min_norm_descent",
        checked: 0,
        failures: 0,
        worst: 0.0,
        detail: "max_j (‖d‖² - d'g_j) / max‖g‖²".into(),
    };
    for i in 0..instances {
        let bundle = random_bundle(seed, 3_000_000_000 + i as u64);
        let gram = compute_gram(&bundle)?;
        let (w, _) = solve_min_norm(&gram.gram);
        let mw = gram.gram_times(w.as_slice());
        let d2: f64 = mw.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
        let scale = gram.gram.iter().enumerate().fold(0.0_f64, |m, (j, r)| m.max(r[j]));
        // optimality of the min-norm point: every d'g_j is at least ‖d‖²
        let gap = mw.iter().map(|s| (d2 - s) / scale).fold(f64::NEG_INFINITY, f64::max);
        row.worst = row.worst.max(gap);
        row.checked += 1;
        if gap > 1e-9 {
            row.failures += 1;
        }
    }
    Ok(row)
}

struct FdCase {
    state: ModelState,
    source: Batch,
    target: Batch,
}

fn fd_case(seed: u64) -> Result<FdCase> {
    let sc = make_two_moons_shift(40, 30.0, 0.1, 0.25, seed)?;
    let arch = ModelArch {
        hidden: vec![8],
        feature_dim: 4,
        disc_hidden: 6,
        ..ModelArch::default()
    };
    Ok(FdCase {
        state: ModelState::init(&arch, 2, sc.classes, seed)?,
        source: sc.source.select(&(0..6).collect::<Vec<_>>()),
        target: sc.target_train.select(&(0..5).collect::<Vec<_>>()),
    })
}

fn with_theta(state: &ModelState, p: &ParamVector) -> ModelState {
    let mut s = state.clone();
    s.feature.set_params(p.clone()).expect("same shape");
    s
}

fn fd_error(f: impl Fn(&ParamVector) -> f64, at: &ParamVector, analytic: &ParamVector) -> Result<f64> {
    let num = finite_diff_gradient(f, at, 1e-6)?;
    Ok(relative_error(analytic.as_slice(), num.as_slice()))
}

fn random_logits(seed: u64, index: u64, rows: usize, cols: usize) -> Matrix {
    let mut r = rng::child_indexed(seed, streams::VERIFY, index);
    let data = (0..rows * cols).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn softmax_rows(m: &Matrix) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| crate::diffnet::softmax(m.row(i)).expect("finite")).collect();
    Matrix::from_rows(&rows).expect("rectangular")
}

fn sigmoid_all(m: &Matrix) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&x| sigmoid(x)).collect()).expect("sized")
}

type FdCheck = (&'static str, Box<dyn Fn(u64) -> Result<f64>>);

fn fd_checks() -> Vec<FdCheck> {
    vec![
        (
            "fd_source_classification",
            Box::new(|seed| {
                let c = fd_case(seed)?;
                let labels = c.source.labels().expect("source labels").to_vec();
                let (_, g) = c.state.source_objective(&c.state.forward(c.source.features())?, &labels)?;
                fd_error(
                    |p| {
                        let s = with_theta(&c.state, p);
                        s.source_objective(&s.forward(c.source.features()).unwrap(), &labels).unwrap().0
                    },
                    c.state.feature.params(),
                    &g,
                )
            }),
        ),
        ("fd_alignment_confusion", Box::new(|seed| adversarial_fd(seed, AlignmentForm::Confusion))),
        ("fd_alignment_negated", Box::new(|seed| adversarial_fd(seed, AlignmentForm::Negated))),
        (
            "fd_alignment_mmd",
            Box::new(|seed| {
                let c = fd_case(seed)?;
                let bw = [0.5, 1.0, 2.0, 4.0];
                let fs = c.state.forward(c.source.features())?;
                let ft = c.state.forward(c.target.features())?;
                let (_, g) = c.state.mmd_objective(&fs, &ft, &bw, MmdEstimator::Biased)?;
                fd_error(
                    |p| {
                        let s = with_theta(&c.state, p);
                        let (a, b) = (s.forward(c.source.features()).unwrap(), s.forward(c.target.features()).unwrap());
                        s.mmd_objective(&a, &b, &bw, MmdEstimator::Biased).unwrap().0
                    },
                    c.state.feature.params(),
                    &g,
                )
            }),
        ),
        (
            "fd_domain_discriminator",
            Box::new(|seed| {
                let ls = random_logits(seed, 4_000_000_000, 5, 1);
                let lt = random_logits(seed, 4_000_000_001, 4, 1);
                let loss = |s: &[f64], t: &[f64]| {
                    let ps: Vec<f64> = s.iter().map(|&x| sigmoid(x)).collect();
                    let pt: Vec<f64> = t.iter().map(|&x| sigmoid(x)).collect();
                    domain_disc_loss(&ps, &pt).unwrap()
                };
                let exact = loss(ls.as_slice(), lt.as_slice());
                let mut analytic = exact.grad_source.clone();
                analytic.extend(&exact.grad_target);
                let at = ParamVector::from_vec([ls.as_slice(), lt.as_slice()].concat());
                fd_error(|p| loss(&p.as_slice()[..5], &p.as_slice()[5..]).loss, &at, &ParamVector::from_vec(analytic))
            }),
        ),
        (
            "fd_classwise_discriminators",
            Box::new(|seed| {
                let (n, k) = (7, 3);
                let weights = softmax_rows(&random_logits(seed, 4_100_000_000, n, k));
                let logits = random_logits(seed, 4_100_000_001, n, k);
                let domains: Vec<Domain> =
                    (0..n).map(|i| if i % 2 == 0 { Domain::Source } else { Domain::Target }).collect();
                let s = SoftLabelWeights(weights);
                let (_, g) = classwise_disc_loss(&s, &domains, &sigmoid_all(&logits))?;
                fd_error(
                    |p| {
                        let m = Matrix::from_vec(n, k, p.as_slice().to_vec()).unwrap();
                        classwise_disc_loss(&s, &domains, &sigmoid_all(&m)).unwrap().0
                    },
                    &ParamVector::from_vec(logits.as_slice().to_vec()),
                    &ParamVector::from_vec(g.as_slice().to_vec()),
                )
            }),
        ),
        (
            "fd_source_ce_logits",
            Box::new(|seed| {
                let logits = random_logits(seed, 4_200_000_000, 6, 3);
                let labels = [0, 1, 2, 2, 1, 0];
                let (_, g) = source_ce_loss(&softmax_rows(&logits), &labels)?;
                fd_error(
                    |p| source_ce_loss(&softmax_rows(&Matrix::from_vec(6, 3, p.as_slice().to_vec()).unwrap()), &labels).unwrap().0,
                    &ParamVector::from_vec(logits.as_slice().to_vec()),
                    &ParamVector::from_vec(g.as_slice().to_vec()),
                )
            }),
        ),
        ("fd_target_refined_ema", Box::new(|seed| tcm_fd(seed, true))),
        ("fd_target_plain_ema", Box::new(|seed| tcm_fd(seed, false))),
        (
            "fd_validation_guidance",
            Box::new(|seed| {
                let c = fd_case(seed)?;
                let (_, g) = validation_guidance(&c.target, &c.state, true)?;
                fd_error(
                    |p| {
                        let s = with_theta(&c.state, p);
                        s.tcm_objective(&c.target, &MarginalEstimate::BatchMean, true).unwrap().loss.raw
                    },
                    c.state.feature.params(),
                    &g,
                )
            }),
        ),
    ]
}

fn adversarial_fd(seed: u64, form: AlignmentForm) -> Result<f64> {
    let c = fd_case(seed)?;
    let fs = c.state.forward(c.source.features())?;
    let ft = c.state.forward(c.target.features())?;
    let (_, g) = c.state.adversarial_objective(&fs, &ft, form)?;
    fd_error(
        |p| {
            let s = with_theta(&c.state, p);
            let (a, b) = (s.forward(c.source.features()).unwrap(), s.forward(c.target.features()).unwrap());
            s.adversarial_objective(&a, &b, form).unwrap().0
        },
        c.state.feature.params(),
        &g,
    )
}

fn tcm_fd(seed: u64, refine: bool) -> Result<f64> {
    let c = fd_case(seed)?;
    let mut r = rng::child_indexed(seed, streams::VERIFY, 4_300_000_000);
    let p0: f64 = r.random_range(0.2..0.8);
    let ema = MarginalEstimate::Ema {
        previous: vec![p0, 1.0 - p0],
        decay: 0.9,
    };
    let g = c.state.tcm_forward(&c.state.forward(c.target.features())?, &ema, refine)?.grad_feature;
    fd_error(
        |p| with_theta(&c.state, p).tcm_objective(&c.target, &ema, refine).unwrap().loss.raw,
        c.state.feature.params(),
        &g,
    )
}

/// Every check of the suite. `instances` random problems per property;
/// gradient checks use `min(instances, 20)` random points each.
pub fn run_verify(seed: u64, instances: usize, fault: Option<Fault>) -> Result<VerifyReport> {
    let mut rows = vec![lp_against_oracle(seed, instances, fault)?];
    rows.extend(theorem_rows(seed, instances, fault)?);
    rows.push(min_norm_row(seed, instances)?);
    let points = instances.min(FD_POINTS);
    for (property, check) in fd_checks() {
        let mut row = VerifyRow {
            property,
            checked: 0,
            failures: 0,
            worst: 0.0,
            detail: format!("relative error (tol {FD_TOL:e})"),
        };
        for i in 0..points {
            let err = check(seed.wrapping_mul(FD_POINTS as u64).wrapping_add(i as u64))?;
            row.worst = row.worst.max(err);
            row.checked += 1;
            if !(err < FD_TOL) {
                row.failures += 1;
            }
        }
        rows.push(row);
    }
    Ok(VerifyReport { rows })
}
