//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `max c.x  s.t.  A x = b, x >= 0` for small dense problems. The
//! caller is expected to pre-scale the data to O(1) magnitudes.

const PIVOT_EPS: f64 = 1e-12;
const FEAS_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SimplexResult {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// rows x (cols + 1); the last column is the right-hand side
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Reduced costs for maximising `obj` restricted to `allowed` columns.
    fn reduced(&self, obj: &[f64], c: usize) -> f64 {
        let mut z = 0.0;
        for (i, &b) in self.basis.iter().enumerate() {
            z += obj[b] * self.t[i][c];
        }
        obj[c] - z
    }

    /// Runs Bland's rule; returns false if unbounded.
    fn optimise(&mut self, obj: &[f64], allowed: &[bool]) -> Option<bool> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..self.cols).find(|&c| allowed[c] && !self.basis.contains(&c) && self.reduced(obj, c) > PIVOT_EPS);
            let Some(c) = entering else {
                return Some(true);
            };
            let mut best: Option<(f64, usize)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][c];
                if a > PIVOT_EPS {
                    let ratio = self.t[r][self.cols] / a;
                    best = match best {
                        None => Some((ratio, r)),
                        Some((br, brow)) => {
                            if ratio < br - 1e-15 || (ratio <= br + 1e-15 && self.basis[r] < self.basis[brow]) {
                                Some((ratio, r))
                            } else {
                                Some((br, brow))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Some(false),
                Some((_, r)) => self.pivot(r, c),
            }
        }
        None
    }
}

/// `a` is row-major with `a.len() == b.len()` rows of `c.len()` entries.
pub(crate) fn solve(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> SimplexResult {
    let n = c.len();
    let rows = a.len();
    // flip rows so that b >= 0, then add one artificial per row
    let cols = n + rows;
    let mut t = Vec::with_capacity(rows);
    for (i, (row, &bi)) in a.iter().zip(b).enumerate() {
        let sign = if bi < 0.0 { -1.0 } else { 1.0 };
        let mut r: Vec<f64> = row.iter().map(|v| sign * v).collect();
        r.extend((0..rows).map(|k| if k == i { 1.0 } else { 0.0 }));
        r.push(sign * bi);
        t.push(r);
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + rows).collect(),
        cols,
    };

    // phase 1: maximise -sum(artificials)
    let mut phase1 = vec![0.0; cols];
    phase1[n..].iter_mut().for_each(|v| *v = -1.0);
    let all = vec![true; cols];
    if tab.optimise(&phase1, &all).is_none() {
        return SimplexResult::Infeasible;
    }
    let infeas: f64 = tab
        .basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= n)
        .map(|(i, _)| tab.t[i][cols])
        .sum();
    if infeas > FEAS_EPS {
        return SimplexResult::Infeasible;
    }
    // drive zero-level artificials out of the basis; drop redundant rows
    let mut r = 0;
    while r < tab.t.len() {
        if tab.basis[r] >= n {
            if let Some(c) = (0..n).find(|&c| tab.t[r][c].abs() > PIVOT_EPS) {
                tab.pivot(r, c);
            } else {
                tab.t.remove(r);
                tab.basis.remove(r);
                continue;
            }
        }
        r += 1;
    }

    let mut obj = c.to_vec();
    obj.extend(std::iter::repeat(0.0).take(rows));
    let mut allowed = vec![true; cols];
    allowed[n..].iter_mut().for_each(|v| *v = false);
    match tab.optimise(&obj, &allowed) {
        None => SimplexResult::Infeasible,
        Some(false) => SimplexResult::Unbounded,
        Some(true) => {
            let mut x = vec![0.0; n];
            for (i, &bv) in tab.basis.iter().enumerate() {
                if bv < n {
                    x[bv] = tab.t[i][cols].max(0.0);
                }
            }
            let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
            SimplexResult::Optimal { x, value }
        }
    }
}
