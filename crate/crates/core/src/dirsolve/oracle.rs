use super::{gram_scale, DescentMode, GramData, SimplexWeights};

/// Exhaustive scan of the simplex lattice with spacing `grid_resolution`.
///
/// Test oracle for [`super::solve_paretoda_lp`]: it rebuilds the constraint
/// system from the definitions, accepts lattice points whose constraint
/// violation is at most `grid_resolution`, and applies the same
/// non-positive-optimum re-solve. Because of that slack the returned point
/// may be slightly infeasible and beat the exact optimum where a floor binds.
pub fn brute_force_lp_oracle(gram: &GramData, mode: DescentMode, grid_resolution: f64) -> SimplexWeights {
    brute_force_lp_oracle_with_slack(gram, mode, grid_resolution, grid_resolution)
}

/// As [`brute_force_lp_oracle`] with an explicit constraint slack in the
/// units of `gram`; a slack of 0 only accepts feasible lattice points.
pub fn brute_force_lp_oracle_with_slack(
    gram: &GramData,
    mode: DescentMode,
    grid_resolution: f64,
    slack: f64,
) -> SimplexWeights {
    let m = gram.objectives();
    let steps = (1.0 / grid_resolution).round().max(1.0) as usize;
    let scale = gram_scale(&gram.gram).max(gram.alignment.iter().fold(0.0_f64, |s, v| s.max(v.abs())));
    if scale == 0.0 {
        return SimplexWeights::uniform(m);
    }
    let mm: Vec<Vec<f64>> = gram.gram.iter().map(|r| r.iter().map(|v| v / scale).collect()).collect();
    let a: Vec<f64> = gram.alignment.iter().map(|v| v / scale).collect();

    let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let any_positive = a.iter().any(|&x| x > 0.0);
    let objective: Vec<f64> = match mode {
        DescentMode::GuidanceDescent => a.clone(),
        DescentMode::PureDescent => mm.iter().map(|r| r.iter().sum::<f64>() / m as f64).collect(),
    };

    let scan = |all_descent: bool| -> Option<(f64, Vec<f64>)> {
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        let mut counts = vec![0usize; m];
        lattice(steps, 0, &mut counts, &mut |c| {
            let w: Vec<f64> = c.iter().map(|&k| k as f64 / steps as f64).collect();
            for j in 0..m {
                let mw: f64 = mm[j].iter().zip(&w).map(|(x, y)| x * y).sum();
                let in_best = a[j] >= amax - 1e-9;
                let floor = if all_descent || mode == DescentMode::PureDescent || in_best {
                    Some(0.0)
                } else if a[j] <= 0.0 {
                    Some(if any_positive { a[j] } else { 0.0 })
                } else {
                    None
                };
                if let Some(f) = floor {
                    if mw * scale < f * scale - slack {
                        return;
                    }
                }
            }
            let val: f64 = objective.iter().zip(&w).map(|(x, y)| x * y).sum();
            let spread: f64 = w.iter().map(|x| (x - 1.0 / m as f64).powi(2)).sum();
            let better = match &best {
                None => true,
                Some((bv, bs, _)) => val > *bv + 1e-12 || (val >= *bv - 1e-12 && spread < *bs),
            };
            if better {
                best = Some((val, spread, w));
            }
        });
        best.map(|(v, _, w)| (v, w))
    };

    let mut result = scan(false);
    if mode == DescentMode::GuidanceDescent && any_positive {
        if let Some((v, _)) = &result {
            if *v <= 0.0 {
                result = scan(true).or(result);
            }
        }
    }
    SimplexWeights::from_raw(result.map(|(_, w)| w).unwrap_or_else(|| vec![1.0 / m as f64; m]))
}

fn lattice(remaining: usize, idx: usize, counts: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    let m = counts.len();
    if idx + 1 == m {
        counts[idx] = remaining;
        f(counts);
        return;
    }
    for k in 0..=remaining {
        counts[idx] = k;
        lattice(remaining - k, idx + 1, counts, f);
    }
}
