use crate::error::{Error, Result};

/// Weighted geometric and arithmetic means of per-chain likelihoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmGm {
    /// `prod_l p_l^{a_l}` with `0^0 = 1`.
    pub geometric: f64,
    /// `sum_l a_l p_l`.
    pub arithmetic: f64,
    /// `L * max_l a_l * geometric`.
    pub upper_bound: f64,
}

/// Evaluates `geometric <= arithmetic <= upper_bound` for likelihoods `p`
/// weighted by the responsibility vector `a`.
///
/// The lower bound holds for any probability vector `a`; the upper bound
/// holds when `a` is the responsibility `p / sum(p)`.
pub fn amgm_gap(p: &[f64], a: &[f64]) -> Result<AmGm> {
    if p.len() != a.len() || p.is_empty() {
        return Err(Error::Dimension(format!("{} likelihoods, {} weights", p.len(), a.len())));
    }
    if p.iter().chain(a).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("likelihoods and weights must be finite and nonnegative".into()));
    }
    let mut log_g = 0.0;
    for (&pi, &ai) in p.iter().zip(a) {
        if ai > 0.0 {
            log_g += ai * pi.ln();
        }
    }
    let geometric = log_g.exp();
    let arithmetic = p.iter().zip(a).map(|(pi, ai)| pi * ai).sum();
    let max_a = a.iter().copied().fold(0.0, f64::max);
    Ok(AmGm { geometric, arithmetic, upper_bound: p.len() as f64 * max_a * geometric })
}
