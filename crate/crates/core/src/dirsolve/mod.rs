//! Direction selection over objective gradients.
//!
//! Given the gradient columns `G = [g_1 .. g_m]` of the training objectives
//! and a guidance gradient `ĝ_v` from held-out data, everything here works on
//! the compressed Gram data `M = G'G`, `a = G'ĝ_v`, so the cost of choosing a
//! direction is `O(m^2 d)` plus an `m`-variable linear program.
//!
//! The linear program picks simplex weights `w` maximising `a'w` (guidance
//! mode) or `(M 1/m)'w` (pure-descent mode) while keeping `(Mw)_j` above the
//! per-objective floors described on [`solve_paretoda_lp`].

mod minnorm;
mod oracle;
mod simplex;
mod theorem;

pub use minnorm::solve_min_norm;
pub use oracle::{brute_force_lp_oracle, brute_force_lp_oracle_with_slack};
pub use theorem::{check_theorem1, Theorem1Branch, Theorem1Report, Theorem1Violation};

use serde::{Deserialize, Serialize};

use crate::diffnet::{dot, ParamVector};
use crate::error::dim_check;
use crate::{Error, Result};
use simplex::SimplexResult;

/// Tolerance for membership in `J*` (ties at the max alignment), applied to
/// the scale-normalised alignments.
pub const TIE_TOL: f64 = 1e-9;
/// Default relaxation of the "validation loss is zero" test.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Gradient columns `(∇L_S, ∇L_D, ∇L_T)` plus the held-out guidance gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    columns: Vec<ParamVector>,
    guidance: ParamVector,
    l_val_shifted: f64,
}

impl GradientBundle {
    pub fn new(columns: Vec<ParamVector>, guidance: ParamVector, l_val_shifted: f64) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least two objectives, got {}", columns.len())));
        }
        let d = guidance.len();
        for c in &columns {
            dim_check("gradient column", d, c.len())?;
            if !c.is_finite() {
                return Err(Error::NonFinite("gradient column".into()));
            }
        }
        if !guidance.is_finite() || !l_val_shifted.is_finite() {
            return Err(Error::NonFinite("guidance gradient".into()));
        }
        Ok(Self {
            columns,
            guidance,
            l_val_shifted,
        })
    }

    pub fn columns(&self) -> &[ParamVector] {
        &self.columns
    }

    pub fn guidance(&self) -> &ParamVector {
        &self.guidance
    }

    pub fn l_val_shifted(&self) -> f64 {
        self.l_val_shifted
    }

    pub fn objectives(&self) -> usize {
        self.columns.len()
    }

    pub fn dim(&self) -> usize {
        self.guidance.len()
    }
}

/// `M = G'G` and `a = G'ĝ_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramData {
    pub gram: Vec<Vec<f64>>,
    pub alignment: Vec<f64>,
}

impl GramData {
    /// Validates shape, finiteness and positive semidefiniteness.
    pub fn new(gram: Vec<Vec<f64>>, alignment: Vec<f64>) -> Result<Self> {
        let m = alignment.len();
        dim_check("gram rows", m, gram.len())?;
        for r in &gram {
            dim_check("gram cols", m, r.len())?;
        }
        if gram.iter().flatten().chain(&alignment).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gram data".into()));
        }
        let mut sym = gram;
        for i in 0..m {
            for j in i + 1..m {
                let v = 0.5 * (sym[i][j] + sym[j][i]);
                sym[i][j] = v;
                sym[j][i] = v;
            }
        }
        let floor = -1e-10 * gram_scale(&sym).max(1.0);
        let min_eig = min_eigenvalue(&sym);
        if min_eig < floor {
            return Err(Error::InvalidArgument(format!("gram matrix is not PSD (min eigenvalue {min_eig:e})")));
        }
        Ok(Self {
            gram: sym,
            alignment,
        })
    }

    pub fn objectives(&self) -> usize {
        self.alignment.len()
    }

    pub fn gram_times(&self, w: &[f64]) -> Vec<f64> {
        self.gram.iter().map(|r| dot(r, w)).collect()
    }
}

pub(crate) fn gram_scale(gram: &[Vec<f64>]) -> f64 {
    gram.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Smallest eigenvalue of a small symmetric matrix (cyclic Jacobi).
fn min_eigenvalue(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}

pub fn compute_gram(bundle: &GradientBundle) -> Result<GramData> {
    let cols = bundle.columns();
    let m = cols.len();
    let mut gram = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let v = cols[i].dot(&cols[j]);
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    let alignment = cols.iter().map(|c| c.dot(bundle.guidance())).collect();
    GramData::new(gram, alignment)
}

/// `J = {j : a_j > 0}`, `J̄` its complement, `J* = {j : a_j >= max a - tie_tol}`.
/// Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    pub positive: Vec<usize>,
    pub non_positive: Vec<usize>,
    pub best: Vec<usize>,
}

pub fn index_sets(a: &[f64], tie_tol: f64) -> IndexSets {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    IndexSets {
        positive: (0..a.len()).filter(|&j| a[j] > 0.0).collect(),
        non_positive: (0..a.len()).filter(|&j| a[j] <= 0.0).collect(),
        best: (0..a.len()).filter(|&j| a[j] >= max - tie_tol).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMode {
    PureDescent,
    GuidanceDescent,
}

impl DescentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DescentMode::PureDescent => "pure_descent",
            DescentMode::GuidanceDescent => "guidance_descent",
        }
    }
}

/// Pure descent iff the shifted validation loss is at most `epsilon`.
pub fn select_mode(l_val_shifted: f64, epsilon: f64) -> Result<DescentMode> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !l_val_shifted.is_finite() || l_val_shifted < -1e-9 {
        return Err(Error::InvalidArgument(format!("shifted validation loss must be non-negative, got {l_val_shifted}")));
    }
    Ok(if l_val_shifted <= epsilon {
        DescentMode::PureDescent
    } else {
        DescentMode::GuidanceDescent
    })
}

/// Which rung of the recovery ladder produced an outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    None,
    /// Guidance optimum was non-positive; re-solved with `(Mw)_j >= 0` for every `j`.
    DescentEnforced,
    /// Right-hand sides lowered by a small tolerance before solving.
    RelaxedTolerance,
    /// The `J̄ \ J*` floors replaced by zero.
    RelaxedRhs,
    /// The min-norm weights were returned.
    MinNorm,
    /// All gradients vanish; uniform weights and a zero direction.
    Converged,
}

impl Fallback {
    pub fn as_str(self) -> &'static str {
        match self {
            Fallback::None => "none",
            Fallback::DescentEnforced => "descent_enforced",
            Fallback::RelaxedTolerance => "relaxed_tolerance",
            Fallback::RelaxedRhs => "relaxed_rhs",
            Fallback::MinNorm => "min_norm",
            Fallback::Converged => "converged",
        }
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("weights must be non-negative: {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights must sum to 1, got {total}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, j: usize) -> Self {
        let mut w = vec![0.0; m];
        w[j] = 1.0;
        Self(w)
    }

    pub(crate) fn from_raw(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Solution of the direction-selection LP together with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionOutcome {
    pub weights: SimplexWeights,
    /// `d*' ĝ_v = a' w*`.
    pub gamma_star: f64,
    /// Value of the LP objective actually maximised.
    pub objective: f64,
    pub mode: DescentMode,
    /// `(M w*)_j = d*' g_j`.
    pub slacks: Vec<f64>,
    pub index_sets: IndexSets,
    pub fallback: Fallback,
}

/// Per-objective floor on `(Mw)_j`; `None` leaves the objective unconstrained.
///
/// * pure descent: every `j` has floor `0`;
/// * guidance descent: `j ∈ J*` has floor `0`, `j ∈ J̄ \ J*` has floor
///   `I(J ≠ ∅) a_j`, `j ∈ J \ J*` is free;
/// * `enforce_descent` puts a zero floor on every `j`.
pub(crate) fn constraint_floors(a: &[f64], sets: &IndexSets, mode: DescentMode, enforce_descent: bool) -> Vec<Option<f64>> {
    let m = a.len();
    if mode == DescentMode::PureDescent || enforce_descent {
        return vec![Some(0.0); m];
    }
    let guided = !sets.positive.is_empty();
    (0..m)
        .map(|j| {
            if sets.best.contains(&j) {
                Some(0.0)
            } else if sets.non_positive.contains(&j) {
                Some(if guided { a[j] } else { 0.0 })
            } else {
                None
            }
        })
        .collect()
}

pub(crate) fn lp_objective(gram: &[Vec<f64>], a: &[f64], mode: DescentMode) -> Vec<f64> {
    match mode {
        DescentMode::GuidanceDescent => a.to_vec(),
        DescentMode::PureDescent => {
            let m = a.len() as f64;
            gram.iter().map(|r| r.iter().sum::<f64>() / m).collect()
        }
    }
}

/// Solves the direction-selection linear program
///
/// ```text
/// max_w  w' c      over the simplex
/// s.t.   (M w)_j >= floor_j
/// ```
///
/// with `c = a` in guidance mode and `c = M 1/m` in pure mode (floors on
/// [`constraint_floors`]). If the guidance optimum is non-positive the
/// problem is re-solved with zero floors on every objective, so the returned
/// direction never increases a training loss in that case. Among optimal
/// points the one closest to `1/m` is returned.
pub fn solve_paretoda_lp(gram: &GramData, mode: DescentMode) -> Result<DirectionOutcome> {
    let m = gram.objectives();
    let m_scale = gram_scale(&gram.gram);
    let a_scale = gram.alignment.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    if m_scale == 0.0 {
        return Ok(DirectionOutcome {
            weights: SimplexWeights::uniform(m),
            gamma_star: 0.0,
            objective: 0.0,
            mode: DescentMode::PureDescent,
            slacks: vec![0.0; m],
            index_sets: index_sets(&gram.alignment, TIE_TOL),
            fallback: Fallback::Converged,
        });
    }
    let scale = m_scale.max(a_scale);
    let mn: Vec<Vec<f64>> = gram.gram.iter().map(|r| r.iter().map(|v| v / scale).collect()).collect();
    let an: Vec<f64> = gram.alignment.iter().map(|v| v / scale).collect();
    let sets = index_sets(&an, TIE_TOL);
    let c = lp_objective(&mn, &an, mode);

    let mut fallback = Fallback::None;
    let mut w = solve_ladder(&mn, &c, &an, &sets, mode, false, &mut fallback);
    if mode == DescentMode::GuidanceDescent && dot(&an, &w) <= 0.0 && !sets.positive.is_empty() {
        let mut fb = Fallback::DescentEnforced;
        w = solve_ladder(&mn, &c, &an, &sets, mode, true, &mut fb);
        fallback = if fb == Fallback::None { Fallback::DescentEnforced } else { fb };
    }

    let slacks = gram.gram_times(&w);
    Ok(DirectionOutcome {
        gamma_star: dot(&gram.alignment, &w),
        objective: dot(&c, &w) * scale,
        mode,
        slacks,
        index_sets: index_sets(&gram.alignment, TIE_TOL * scale),
        weights: SimplexWeights::from_raw(w),
        fallback,
    })
}

fn solve_ladder(
    mn: &[Vec<f64>],
    c: &[f64],
    an: &[f64],
    sets: &IndexSets,
    mode: DescentMode,
    enforce_descent: bool,
    fallback: &mut Fallback,
) -> Vec<f64> {
    let floors = constraint_floors(an, sets, mode, enforce_descent);
    if let Some(w) = solve_with_floors(mn, c, &floors) {
        return w;
    }
    let relaxed: Vec<Option<f64>> = floors.iter().map(|f| f.map(|v| v - 1e-9)).collect();
    if let Some(w) = solve_with_floors(mn, c, &relaxed) {
        *fallback = Fallback::RelaxedTolerance;
        return w;
    }
    let zeroed: Vec<Option<f64>> = floors.iter().map(|f| f.map(|_| 0.0)).collect();
    if let Some(w) = solve_with_floors(mn, c, &zeroed) {
        *fallback = Fallback::RelaxedRhs;
        return w;
    }
    *fallback = Fallback::MinNorm;
    solve_min_norm(mn).0.0
}

/// Exact LP optimum followed by the closest-to-uniform tie break.
fn solve_with_floors(mn: &[Vec<f64>], c: &[f64], floors: &[Option<f64>]) -> Option<Vec<f64>> {
    let m = c.len();
    let constrained: Vec<usize> = (0..m).filter(|&j| floors[j].is_some()).collect();
    let k = constrained.len();
    // variables: w (m), surplus (k)
    let mut rows = Vec::with_capacity(k + 1);
    let mut rhs = Vec::with_capacity(k + 1);
    let mut sum_row = vec![1.0; m];
    sum_row.extend(std::iter::repeat(0.0).take(k));
    rows.push(sum_row);
    rhs.push(1.0);
    for (s, &j) in constrained.iter().enumerate() {
        let mut r = mn[j].clone();
        r.extend((0..k).map(|t| if t == s { -1.0 } else { 0.0 }));
        rows.push(r);
        rhs.push(floors[j].unwrap());
    }
    let mut obj = c.to_vec();
    obj.extend(std::iter::repeat(0.0).take(k));
    let (x, value) = match simplex::solve(&obj, &rows, &rhs) {
        SimplexResult::Optimal { x, value } => (x, value),
        _ => return None,
    };
    let vertex: Vec<f64> = x[..m].to_vec();

    // inequalities h'w >= b describing the optimal face
    let mut ineqs: Vec<(Vec<f64>, f64)> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            (e, 0.0)
        })
        .collect();
    for &j in &constrained {
        ineqs.push((mn[j].clone(), floors[j].unwrap()));
    }
    ineqs.push((c.to_vec(), value));
    let target = vec![1.0 / m as f64; m];
    Some(project_onto_face(&target, &ineqs, m).unwrap_or(vertex))
}

const FACE_TOL: f64 = 1e-12;
const OBJ_TOL: f64 = 1e-10;

/// Euclidean projection of `u` onto `{w : sum w = 1, h_i'w >= b_i}` by
/// enumerating active sets of size at most `m - 1`. The last inequality is
/// the optimality cut and gets the looser tolerance.
fn project_onto_face(u: &[f64], ineqs: &[(Vec<f64>, f64)], m: usize) -> Option<Vec<f64>> {
    let n_ineq = ineqs.len();
    let feasible = |w: &[f64]| {
        ineqs.iter().enumerate().all(|(i, (h, b))| {
            let tol = if i + 1 == n_ineq { OBJ_TOL } else { FACE_TOL };
            dot(h, w) >= b - tol * (1.0 + b.abs())
        })
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut active = Vec::with_capacity(m);
    enumerate_subsets(n_ineq, m - 1, 0, &mut active, &mut |subset| {
        let mut eq_rows = vec![(vec![1.0; m], 1.0)];
        for &i in subset {
            let (h, b) = &ineqs[i];
            let nrm = dot(h, h).sqrt();
            if nrm < 1e-14 {
                return;
            }
            eq_rows.push((h.iter().map(|v| v / nrm).collect(), b / nrm));
        }
        let Some(w) = affine_projection(u, &eq_rows) else {
            return;
        };
        if !feasible(&w) {
            return;
        }
        let dist: f64 = w.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().map_or(true, |(bd, _)| dist < *bd - 1e-18) {
            best = Some((dist, w));
        }
    });
    best.map(|(_, mut w)| {
        w.iter_mut().for_each(|x| *x = if *x < 1e-13 { 0.0 } else { *x });
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w
    })
}

fn enumerate_subsets(n: usize, max_size: usize, start: usize, current: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    f(current);
    if current.len() == max_size {
        return;
    }
    for i in start..n {
        current.push(i);
        enumerate_subsets(n, max_size, i + 1, current, f);
        current.pop();
    }
}

/// `argmin ||w - u||` subject to `E w = e`; `None` when `E` is rank deficient.
fn affine_projection(u: &[f64], rows: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let k = rows.len();
    // (E E') lambda = E u - e
    let mut sys = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            sys[i][j] = dot(&rows[i].0, &rows[j].0);
        }
        sys[i][k] = dot(&rows[i].0, u) - rows[i].1;
    }
    let lambda = gauss_solve(sys)?;
    let mut w = u.to_vec();
    for (i, (h, _)) in rows.iter().enumerate() {
        for (wv, hv) in w.iter_mut().zip(h) {
            *wv -= lambda[i] * hv;
        }
    }
    Some(w)
}

fn gauss_solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// `d* = G w*`, cross-checked against the Gram-space slacks.
pub fn compose_direction(bundle: &GradientBundle, outcome: &DirectionOutcome) -> Result<ParamVector> {
    let w = outcome.weights.as_slice();
    dim_check("direction weights", bundle.objectives(), w.len())?;
    let d = combine(bundle.columns(), w);
    let scale = bundle.columns().iter().map(|g| g.dot(g)).fold(1.0_f64, f64::max);
    for (j, g) in bundle.columns().iter().enumerate() {
        let s = g.dot(&d);
        if (s - outcome.slacks[j]).abs() > 1e-8 * scale {
            return Err(Error::InvalidArgument(format!(
                "slack mismatch for objective {j}: d-space {s:e} vs gram-space {:e}",
                outcome.slacks[j]
            )));
        }
    }
    Ok(d)
}

fn combine(columns: &[ParamVector], w: &[f64]) -> ParamVector {
    let mut d = ParamVector::zeros(columns[0].len());
    for (g, &wj) in columns.iter().zip(w) {
        if wj != 0.0 {
            d.axpy(wj, g);
        }
    }
    d
}

/// `d = G λ` for fixed non-negative weights (not normalised).
pub fn linear_direction(columns: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    dim_check("linear weights", columns.len(), weights.len())?;
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("linear weights must be non-negative: {weights:?}")));
    }
    Ok(combine(columns, weights))
}

/// `d = G 1/m`.
pub fn mean_direction(columns: &[ParamVector]) -> ParamVector {
    let m = columns.len();
    combine(columns, &vec![1.0 / m as f64; m])
}
