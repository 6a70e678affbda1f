use nalgebra::{DMatrix, DVector};

use super::cem::continuous_log_weight;
use crate::chain::trail_log_weight;
use crate::error::{Error, Result};
use crate::types::{ContinuousTrail, CtMixture, DiscreteTrail, RateMatrix};

/// Observed beginning of a trail.
#[derive(Debug, Clone, Copy)]
pub enum Prefix<'a> {
    Continuous(&'a ContinuousTrail),
    Discrete(&'a DiscreteTrail),
}

impl Prefix<'_> {
    pub fn last_state(&self) -> usize {
        match self {
            Prefix::Continuous(x) => x.final_state(),
            Prefix::Discrete(x) => x.states()[x.len() - 1],
        }
    }
}

fn reaches_target(k: &RateMatrix, hit: usize, miss: usize) -> Vec<bool> {
    let n = k.n();
    let mut ok = vec![false; n];
    ok[hit] = true;
    ok[miss] = true;
    loop {
        let mut changed = false;
        for y in 0..n {
            if !ok[y] && (0..n).any(|z| z != y && ok[z] && k.rate(y, z) > 0.0) {
                ok[y] = true;
                changed = true;
            }
        }
        if !changed {
            return ok;
        }
    }
}

/// Probability of ending in `hit` from every state, treating `hit` and
/// `miss` as absorbing. `chain` only labels errors.
pub fn absorption_probabilities(k: &RateMatrix, hit: usize, miss: usize, chain: usize) -> Result<Vec<f64>> {
    let n = k.n();
    if hit >= n || miss >= n || hit == miss {
        return Err(Error::InvalidArgument(format!("hit={hit}, miss={miss} invalid for {n} states")));
    }
    let ok = reaches_target(k, hit, miss);
    if let Some(state) = ok.iter().position(|v| !v) {
        return Err(Error::SubstochasticAbsorption { chain, state });
    }
    let transient: Vec<usize> = (0..n).filter(|&y| y != hit && y != miss).collect();
    let mut h = vec![0.0; n];
    h[hit] = 1.0;
    if transient.is_empty() {
        return Ok(h);
    }
    let t = transient.len();
    let mut a = DMatrix::<f64>::identity(t, t);
    let mut b = DVector::<f64>::zeros(t);
    for (i, &y) in transient.iter().enumerate() {
        let exit = k.exit_rate(y);
        for (j, &z) in transient.iter().enumerate() {
            if z != y {
                a[(i, j)] -= k.rate(y, z) / exit;
            }
        }
        b[i] = k.rate(y, hit) / exit;
    }
    let sol = a.lu().solve(&b).ok_or_else(|| Error::Numerical("absorption system is singular".into()))?;
    for (i, &y) in transient.iter().enumerate() {
        h[y] = sol[i].clamp(0.0, 1.0);
    }
    Ok(h)
}

/// Precomputed absorption probabilities for every chain of a mixture.
#[derive(Debug, Clone)]
pub struct AbsorptionModel {
    mixture: CtMixture,
    hit: usize,
    miss: usize,
    h: Vec<Vec<f64>>,
}

impl AbsorptionModel {
    pub fn new(mixture: &CtMixture, hit: usize, miss: usize) -> Result<Self> {
        let h = (0..mixture.l())
            .map(|c| absorption_probabilities(mixture.chain(c), hit, miss, c))
            .collect::<Result<_>>()?;
        Ok(Self { mixture: mixture.clone(), hit, miss, h })
    }

    pub fn hit(&self) -> usize {
        self.hit
    }

    pub fn miss(&self) -> usize {
        self.miss
    }

    /// Chain probabilities given the prefix. Falls back to the start-mass
    /// prior when the prefix is impossible under every chain.
    pub fn posterior(&self, prefix: Prefix<'_>) -> Result<Vec<f64>> {
        let m = &self.mixture;
        let l = m.l();
        let logs: Vec<f64> = match prefix {
            Prefix::Continuous(x) => (0..l).map(|c| continuous_log_weight(x, m, c)).collect::<Result<_>>()?,
            Prefix::Discrete(x) => {
                let dt = m.discretize(x.tau())?;
                (0..l).map(|c| trail_log_weight(x, &dt, c)).collect::<Result<_>>()?
            }
        };
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = if max.is_finite() {
            logs.iter().map(|v| (v - max).exp()).collect()
        } else {
            (0..l).map(|c| m.start().row(c).sum()).collect()
        };
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Ok(vec![1.0 / l as f64; l]);
        }
        Ok(w.iter().map(|v| v / s).collect())
    }

    pub fn predict(&self, prefix: Prefix<'_>) -> Result<f64> {
        let y = prefix.last_state();
        if y >= self.mixture.n() {
            return Err(Error::InvalidArgument(format!("prefix ends in unknown state {y}")));
        }
        let post = self.posterior(prefix)?;
        let p: f64 = post.iter().zip(&self.h).map(|(w, h)| w * h[y]).sum();
        Ok(p.clamp(0.0, 1.0))
    }
}

/// `Pr[end in hit | prefix] = sum_l Pr[l | prefix] Pr[hit | last state, K^l]`.
pub fn predict_absorption(m: &CtMixture, prefix: Prefix<'_>, hit: usize, miss: usize) -> Result<f64> {
    AbsorptionModel::new(m, hit, miss)?.predict(prefix)
}
