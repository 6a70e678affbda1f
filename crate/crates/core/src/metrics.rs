//! Distances between chains and mixtures, and clustering quality.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::types::{CtMixture, RateMatrix, SoftAssignment};

/// Largest `L` for which chain matchings are found by enumerating `S_L`.
pub const EXHAUSTIVE_MATCHING_MAX: usize = 8;

/// `int_0^inf |a e^{-alpha t} - b e^{-beta t}| dt` for `a, b >= 0` and
/// positive decay rates wherever the matching amplitude is positive.
fn abs_exp_gap_integral(a: f64, alpha: f64, b: f64, beta: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    if a == 0.0 {
        return b / beta;
    }
    if b == 0.0 {
        return a / alpha;
    }
    if alpha == beta {
        return (a - b).abs() / alpha;
    }
    // the two exponentials cross at most once
    let t_star = (a / b).ln() / (alpha - beta);
    if !(t_star > 0.0) || !t_star.is_finite() {
        return (a / alpha - b / beta).abs();
    }
    let head = a / alpha * -(-alpha * t_star).exp_m1() - b / beta * -(-beta * t_star).exp_m1();
    let tail = a / alpha * (-alpha * t_star).exp() - b / beta * (-beta * t_star).exp();
    head.abs() + tail.abs()
}

/// Total variation distance between the (next state, holding time)
/// distributions out of state `y` under two generator rows.
pub fn tv_rate_rows(ky: &[f64], kpy: &[f64], y: usize) -> Result<f64> {
    if ky.len() != kpy.len() || y >= ky.len() {
        return Err(Error::Dimension("rows differ in length".into()));
    }
    let alpha = -ky[y];
    let beta = -kpy[y];
    let mut total = 0.0;
    for z in 0..ky.len() {
        if z == y {
            continue;
        }
        let (a, b) = (ky[z], kpy[z]);
        if (a > 0.0 && alpha <= 0.0) || (b > 0.0 && beta <= 0.0) {
            return Err(Error::InvalidRateMatrix(format!("row {y} has outgoing rates but no exit rate")));
        }
        total += abs_exp_gap_integral(a, alpha, b, beta);
    }
    Ok((0.5 * total).min(1.0))
}

/// [`tv_rate_rows`] on row `y` of two generators.
pub fn tv_ctmc_rows(k: &RateMatrix, kp: &RateMatrix, y: usize) -> Result<f64> {
    if k.n() != kp.n() {
        return Err(Error::Dimension("generators differ in size".into()));
    }
    tv_rate_rows(&k.row(y), &kp.row(y), y)
}

/// Average over states of [`tv_ctmc_rows`].
pub fn chain_recovery_error(k: &RateMatrix, kp: &RateMatrix) -> Result<f64> {
    if k.n() != kp.n() {
        return Err(Error::Dimension("generators differ in size".into()));
    }
    let n = k.n();
    let mut s = 0.0;
    for y in 0..n {
        s += tv_ctmc_rows(k, kp, y)?;
    }
    Ok(s / n as f64)
}

/// Minimum-cost perfect matching for a square cost matrix given row-major.
/// Returns the permutation (`perm[i]` is the column matched to row `i`) and
/// its cost. Enumerates all permutations up to [`EXHAUSTIVE_MATCHING_MAX`],
/// otherwise runs the Hungarian algorithm.
pub fn min_cost_matching(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let l = cost.len();
    if l == 0 {
        return (Vec::new(), 0.0);
    }
    if l <= EXHAUSTIVE_MATCHING_MAX {
        let mut best = (Vec::new(), f64::INFINITY);
        for perm in (0..l).permutations(l) {
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            if c < best.1 {
                best = (perm, c);
            }
        }
        best
    } else {
        let perm = hungarian(cost);
        let c = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        (perm, c)
    }
}

/// Hungarian algorithm with row/column potentials, O(L^3).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

/// Recovery error between mixtures together with the best matching
/// (`perm[l]` is the chain of `b` matched to chain `l` of `a`).
pub fn recovery_error_matched(a: &CtMixture, b: &CtMixture) -> Result<(f64, Vec<usize>)> {
    if a.l() != b.l() || a.n() != b.n() {
        return Err(Error::Dimension(format!("mixtures are L={}, n={} and L={}, n={}", a.l(), a.n(), b.l(), b.n())));
    }
    let l = a.l();
    let mut cost = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in 0..l {
            cost[i][j] = chain_recovery_error(a.chain(i), b.chain(j))?;
        }
    }
    let (perm, c) = min_cost_matching(&cost);
    Ok((c / l as f64, perm))
}

/// Average per-state continuous TV distance under the best chain matching.
pub fn recovery_error(a: &CtMixture, b: &CtMixture) -> Result<f64> {
    recovery_error_matched(a, b).map(|(e, _)| e)
}

/// `(1 / 2r) min_sigma sum_l sum_x |a(x,l) - a_gt(x, sigma(l))|`.
pub fn clustering_error(a: &SoftAssignment, a_gt: &SoftAssignment) -> Result<f64> {
    if a.r() != a_gt.r() || a.l() != a_gt.l() {
        return Err(Error::Dimension(format!("assignments are {}x{} and {}x{}", a.r(), a.l(), a_gt.r(), a_gt.l())));
    }
    let (r, l) = (a.r(), a.l());
    if r == 0 {
        return Ok(0.0);
    }
    let mut cost = vec![vec![0.0; l]; l];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = (0..r).map(|x| (a.get(x, i) - a_gt.get(x, j)).abs()).sum();
        }
    }
    let (_, c) = min_cost_matching(&cost);
    Ok(c / (2.0 * r as f64))
}

/// Median of the per-trail assignment entropies (nats).
pub fn median_assignment_entropy(a: &SoftAssignment) -> f64 {
    median(&a.entropies())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
