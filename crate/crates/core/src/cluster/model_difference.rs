use crate::chain::matrix_exponential;
use crate::error::{Error, Result};
use crate::types::RateMatrix;

/// Row comparison for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDifference {
    /// `||K_y - K'_y||_2`.
    pub rate_gap: f64,
    /// `||exp(K tau)_y - exp(K' tau)_y||_2`.
    pub discrete_gap: f64,
    /// `rate_gap >= delta / tau + 8 tau (1 + K_max^2)`.
    pub premise: bool,
    /// `discrete_gap >= delta`.
    pub conclusion: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDifferenceReport {
    pub tau: f64,
    pub delta: f64,
    pub k_max: f64,
    /// Rate gap required for the premise.
    pub threshold: f64,
    pub states: Vec<StateDifference>,
}

impl ModelDifferenceReport {
    /// States where a large rate gap did not produce a large discrete gap.
    pub fn violations(&self) -> Vec<usize> {
        self.states.iter().enumerate().filter(|(_, s)| s.premise && !s.conclusion).map(|(y, _)| y).collect()
    }
}

fn l2(a: impl Iterator<Item = f64>) -> f64 {
    a.map(|v| v * v).sum::<f64>().sqrt()
}

/// Checks, per state, whether a rate-row separation large enough relative to
/// `delta` carries over to the transition rows at interval `tau`. Requires
/// `K_max * tau <= 1/2`, with `K_max` the largest exit rate of either matrix.
pub fn model_difference_check(a: &RateMatrix, b: &RateMatrix, tau: f64, delta: f64) -> Result<ModelDifferenceReport> {
    if a.n() != b.n() {
        return Err(Error::Dimension(format!("{} vs {} states", a.n(), b.n())));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {delta}")));
    }
    let k_max = a.max_exit_rate().max(b.max_exit_rate());
    if k_max * tau > 0.5 {
        return Err(Error::Regime(k_max * tau));
    }
    let ta = matrix_exponential(a, tau)?;
    let tb = matrix_exponential(b, tau)?;
    let threshold = delta / tau + 8.0 * tau * (1.0 + k_max * k_max);
    let n = a.n();
    let states = (0..n)
        .map(|y| {
            let rate_gap = l2((0..n).map(|z| a.rate(y, z) - b.rate(y, z)));
            let discrete_gap = l2((0..n).map(|z| ta.prob(y, z) - tb.prob(y, z)));
            StateDifference {
                rate_gap,
                discrete_gap,
                premise: rate_gap >= threshold,
                conclusion: discrete_gap >= delta,
            }
        })
        .collect();
    Ok(ModelDifferenceReport { tau, delta, k_max, threshold, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn k(a: f64, b: f64) -> RateMatrix {
        RateMatrix::from_off_diagonal(dmatrix![0.0, a; b, 0.0]).unwrap()
    }

    #[test]
    fn identical_matrices() {
        let r = model_difference_check(&k(1.0, 0.5), &k(1.0, 0.5), 0.1, 0.01).unwrap();
        assert!(r.states.iter().all(|s| !s.premise && !s.conclusion));
    }

    #[test]
    fn zero_delta_conclusion_always_holds() {
        let r = model_difference_check(&k(1.0, 0.5), &k(0.2, 2.0), 0.2, 0.0).unwrap();
        assert!(r.states.iter().all(|s| s.conclusion));
        assert!(r.violations().is_empty());
    }

    #[test]
    fn regime_violation() {
        assert_eq!(model_difference_check(&k(1.0, 1.0), &k(1.0, 5.0), 0.2, 0.1), Err(Error::Regime(1.0)));
    }
}
