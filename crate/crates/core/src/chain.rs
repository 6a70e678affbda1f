//! Single-chain quantities: discretization, stationary distributions,
//! mixing times, the condition number of a mixture, and trail likelihoods.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{CtMixture, DiscreteChain, DiscreteTrail, DtMixture, RateMatrix};

/// Entries of `exp(K tau)` in `[-NEG_CLAMP, 0)` are roundoff and become 0.
pub const NEG_CLAMP: f64 = 1e-12;
/// Row-sum drift of `exp(K tau)` that is renormalized away.
const ROW_DRIFT: f64 = 1e-6;
/// Mixing threshold on the worst-case total variation distance.
pub const MIXING_THRESHOLD: f64 = 1.0 / 3.0;

/// `T(tau) = exp(K tau)`.
pub fn matrix_exponential(k: &RateMatrix, tau: f64) -> Result<DiscreteChain> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let mut t = linalg::expm(&(k.matrix() * tau))?;
    for v in t.iter_mut() {
        if *v < 0.0 {
            if *v < -NEG_CLAMP {
                return Err(Error::Numerical(format!("matrix exponential entry {v} < 0")));
            }
            *v = 0.0;
        }
    }
    for mut row in t.row_iter_mut() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > ROW_DRIFT {
            return Err(Error::Numerical(format!("matrix exponential row sums to {s}")));
        }
        row /= s;
    }
    DiscreteChain::new(t, Some(tau))
}

fn strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(y) = stack.pop() {
            for z in 0..n {
                let e = if forward { edge(y, z) } else { edge(z, y) };
                if z != y && e && !seen[z] {
                    seen[z] = true;
                    stack.push(z);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Solves `pi A = 0`, `sum(pi) = 1` for a generator-like `A`.
fn null_distribution(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut sys = a.transpose();
    for j in 0..n {
        sys[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = sys.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular stationary system".into()))?;
    let mut pi: Vec<f64> = pi.iter().map(|&v| if v < 0.0 && v > -1e-12 { 0.0 } else { v }).collect();
    if pi.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Numerical("stationary solve produced negative mass".into()));
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    Ok(pi)
}

/// Stationary distribution of an irreducible generator: `pi K = 0`.
pub fn stationary_distribution(k: &RateMatrix) -> Result<Vec<f64>> {
    let n = k.n();
    if !strongly_connected(n, |y, z| k.rate(y, z) > 0.0) {
        return Err(Error::NotIrreducible);
    }
    let pi = null_distribution(k.matrix())?;
    let resid = (DMatrix::from_row_slice(1, n, &pi) * k.matrix()).abs().sum();
    if resid > 1e-9 * k.max_exit_rate().max(1.0) {
        return Err(Error::Numerical(format!("stationary residual {resid}")));
    }
    Ok(pi)
}

/// Stationary distribution of an irreducible transition matrix: `pi T = pi`.
pub fn stationary_distribution_discrete(t: &DiscreteChain) -> Result<Vec<f64>> {
    let n = t.n();
    if !strongly_connected(n, |y, z| t.prob(y, z) > 0.0) {
        return Err(Error::NotIrreducible);
    }
    let a = t.matrix() - DMatrix::identity(n, n);
    let pi = null_distribution(&a)?;
    let resid = (DMatrix::from_row_slice(1, n, &pi) * &a).abs().sum();
    if resid > 1e-9 {
        return Err(Error::Numerical(format!("stationary residual {resid}")));
    }
    Ok(pi)
}

/// Worst case over point-mass starts of `TV(P_y, pi)`.
fn worst_tv(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    (0..p.nrows())
        .map(|y| 0.5 * pi.iter().enumerate().map(|(z, &q)| (p[(y, z)] - q).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest `k >= 0` with `mixed(k)`, for a predicate that stays true once
/// it becomes true.
fn first_true(mut mixed: impl FnMut(u64) -> Result<bool>) -> Result<u64> {
    if mixed(0)? {
        return Ok(0);
    }
    let mut hi: u64 = 1;
    while !mixed(hi)? {
        if hi >= 1 << 50 {
            return Err(Error::Numerical("chain does not mix".into()));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    // invariant: !mixed(lo) (or lo == 0), mixed(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if mixed(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Mixing time of a generator, searched on the grid `resolution * k`.
pub fn mixing_time(k: &RateMatrix, resolution: f64) -> Result<f64> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let pi = stationary_distribution(k)?;
    let steps = first_true(|s| {
        let p = linalg::expm(&(k.matrix() * (s as f64 * resolution)))?;
        Ok(worst_tv(&p, &pi) <= MIXING_THRESHOLD)
    })?;
    Ok(steps as f64 * resolution)
}

/// Mixing time (in steps) of a discrete chain.
pub fn mixing_time_discrete(t: &DiscreteChain) -> Result<u64> {
    let pi = stationary_distribution_discrete(t)?;
    first_true(|s| {
        let p = matrix_power(t.matrix(), s);
        Ok(worst_tv(&p, &pi) <= MIXING_THRESHOLD)
    })
}

fn matrix_power(a: &DMatrix<f64>, mut e: u64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = a.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    result
}

/// `kappa = K_max / K_min` over all exit rates of the mixture.
pub fn condition_number(m: &CtMixture) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (l, k) in m.chains().iter().enumerate() {
        for y in 0..k.n() {
            let r = k.exit_rate(y);
            if r <= 0.0 {
                return Err(Error::DegenerateHoldingRate { chain: l, state: y });
            }
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    Ok(hi / lo)
}

/// `log(s[l][x0] * prod_i T[l][x_i][x_{i+1}])`; `-inf` when any factor is 0.
pub fn trail_log_weight(x: &DiscreteTrail, mixture: &DtMixture, l: usize) -> Result<f64> {
    if l >= mixture.l() {
        return Err(Error::Dimension(format!("chain {l} out of range")));
    }
    if x.state_bound() > mixture.n() {
        return Err(Error::Dimension("trail state exceeds mixture size".into()));
    }
    Ok(log_weight_unchecked(x, mixture, l))
}

pub(crate) fn log_weight_unchecked(x: &DiscreteTrail, mixture: &DtMixture, l: usize) -> f64 {
    let t = mixture.chain(l).matrix();
    let mut acc = mixture.start()[(l, x.first())].ln();
    for (y, z) in x.transitions() {
        acc += t[(y, z)].ln();
        if acc == f64::NEG_INFINITY {
            break;
        }
    }
    acc
}
