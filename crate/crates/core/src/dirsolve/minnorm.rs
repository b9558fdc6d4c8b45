use super::{gram_scale, SimplexWeights};

const GAP_TOL: f64 = 1e-10;
const MAX_ITERS: usize = 10_000;

/// Min-norm point of the convex hull of the gradients (the MGDA direction),
/// found by Frank–Wolfe with away steps and exact line search on `w'Mw`.
///
/// Starts from the uniform weights, so problems where every simplex point is
/// optimal return `1/m`. Returns the weights and `||G w||^2 = w'Mw`.
pub fn solve_min_norm(gram: &[Vec<f64>]) -> (SimplexWeights, f64) {
    let m = gram.len();
    let scale = gram_scale(gram);
    let mut w = vec![1.0 / m as f64; m];
    if scale == 0.0 {
        return (SimplexWeights::from_raw(w), 0.0);
    }
    let mm: Vec<Vec<f64>> = gram.iter().map(|r| r.iter().map(|v| v / scale).collect()).collect();
    let matvec = |w: &[f64]| -> Vec<f64> { mm.iter().map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum()).collect() };

    for _ in 0..MAX_ITERS {
        let mw = matvec(&w);
        let f: f64 = w.iter().zip(&mw).map(|(a, b)| a * b).sum();
        let (s, s_val) = argmin(&mw, |_| true);
        let gap = 2.0 * (f - s_val);
        if gap < GAP_TOL {
            break;
        }
        let (v, v_val) = argmax(&mw, |j| w[j] > 0.0);
        // compare directional derivatives of -grad along the two candidate directions
        let fw_gain = f - s_val;
        let away_gain = v_val - f;
        let (dir, gamma_max) = if fw_gain >= away_gain || w[v] >= 1.0 {
            let mut d: Vec<f64> = w.iter().map(|x| -x).collect();
            d[s] += 1.0;
            (d, 1.0)
        } else {
            let mut d = w.clone();
            d[v] -= 1.0;
            (d, w[v] / (1.0 - w[v]))
        };
        let md = matvec(&dir);
        let d_mw: f64 = dir.iter().zip(&mw).map(|(a, b)| a * b).sum();
        let d_md: f64 = dir.iter().zip(&md).map(|(a, b)| a * b).sum();
        let gamma = if d_md > 0.0 { (-d_mw / d_md).clamp(0.0, gamma_max) } else { gamma_max };
        if gamma == 0.0 {
            break;
        }
        for (x, d) in w.iter_mut().zip(&dir) {
            *x += gamma * d;
        }
        for x in w.iter_mut() {
            if *x < 1e-15 {
                *x = 0.0;
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
    }
    let mw = matvec(&w);
    let f: f64 = w.iter().zip(&mw).map(|(a, b)| a * b).sum();
    (SimplexWeights::from_raw(w), (f * scale).max(0.0))
}

fn argmin(v: &[f64], ok: impl Fn(usize) -> bool) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, &x) in v.iter().enumerate() {
        if ok(j) && x < best.1 {
            best = (j, x);
        }
    }
    best
}

fn argmax(v: &[f64], ok: impl Fn(usize) -> bool) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (j, &x) in v.iter().enumerate() {
        if ok(j) && x > best.1 {
            best = (j, x);
        }
    }
    best
}
