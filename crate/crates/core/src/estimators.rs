//! Closed-form single-chain estimators on discretized trails, plus the rules
//! for choosing the discretization interval.
//!
//! Holding rates come from the fraction of self-transitions,
//! `K_yy = ln(q_y) / tau`; jump rates split `|K_yy|` in proportion to the
//! observed state-changing transitions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{check_states, DiscreteTrail, RateMatrix, WeightedCounts};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Target relative error of the holding probabilities.
    pub eps_h: f64,
    /// Target TV error of the jump probabilities.
    pub eps_t: f64,
    /// Overall TV target per row.
    pub eps: f64,
    /// Rows with fewer (soft) transitions are not estimated.
    pub min_count: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { eps_h: 0.01, eps_t: 0.05, eps: 0.1, min_count: 20.0 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_h", self.eps_h), ("eps_t", self.eps_t), ("eps", self.eps)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.min_count >= 1.0) {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Why a state's row could not be (fully) estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateFlag {
    /// No transitions leave the state.
    Unobserved,
    /// Fewer than `min_count` transitions leave the state.
    LowCount,
    /// No self-transitions were seen, so the exit rate is unbounded.
    HoldingUnderflow,
    /// The state was never left; its row is zero.
    NoJumps,
}

impl StateFlag {
    /// Whether the flag means the row carries no estimate.
    pub fn is_unestimated(self) -> bool {
        !matches!(self, StateFlag::NoJumps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldingEstimate {
    /// `c_y`, the soft number of transitions leaving the state.
    pub count: f64,
    /// Estimated probability of staying put for one interval.
    pub q: f64,
    /// Estimated diagonal entry `ln(q) / tau` (non-positive).
    pub diag: f64,
    pub flag: Option<StateFlag>,
}

/// Holding probability and diagonal rate per state.
pub fn estimate_holding(c: &WeightedCounts, tau: f64, min_count: f64) -> Result<Vec<HoldingEstimate>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok((0..c.n())
        .map(|y| {
            let count = c.row_total(y);
            if count <= 0.0 {
                return HoldingEstimate { count, q: f64::NAN, diag: f64::NAN, flag: Some(StateFlag::Unobserved) };
            }
            let q = (c.get(y, y) / count).min(1.0);
            if q <= 0.0 {
                return HoldingEstimate {
                    count,
                    q: 0.0,
                    diag: f64::NEG_INFINITY,
                    flag: Some(StateFlag::HoldingUnderflow),
                };
            }
            let diag = if q == 1.0 { 0.0 } else { q.ln() / tau };
            let flag = (count < min_count).then_some(StateFlag::LowCount);
            HoldingEstimate { count, q, diag, flag }
        })
        .collect())
}

/// Jump probabilities `C_yz / sum_{z' != y} C_yz'` over `z != y`; `None` for
/// states without state-changing transitions.
pub fn estimate_jump_probs(c: &WeightedCounts) -> Vec<Option<Vec<f64>>> {
    let n = c.n();
    (0..n)
        .map(|y| {
            let changes: f64 = (0..n).filter(|&z| z != y).map(|z| c.get(y, z)).sum();
            (changes > 0.0).then(|| (0..n).map(|z| if z == y { 0.0 } else { c.get(y, z) / changes }).collect())
        })
        .collect()
}

/// Result of [`estimate_rate_matrix`]: unestimated rows are zero and listed
/// in `flags`; `warnings` collects advisory sample-size notes.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub rate: RateMatrix,
    pub flags: Vec<(usize, StateFlag)>,
    pub warnings: Vec<String>,
}

impl RateEstimate {
    pub fn estimated_states(&self) -> Vec<usize> {
        (0..self.rate.n()).filter(|y| !self.flags.iter().any(|(s, f)| s == y && f.is_unestimated())).collect()
    }
}

/// Composite estimator from counts: `K_yz = p_yz |K_yy|`.
pub fn estimate_from_counts(c: &WeightedCounts, tau: f64, cfg: &EstimatorConfig) -> Result<RateEstimate> {
    cfg.validate()?;
    let n = c.n();
    let holding = estimate_holding(c, tau, cfg.min_count)?;
    let jumps = estimate_jump_probs(c);
    let mut k = DMatrix::zeros(n, n);
    let mut flags = Vec::new();
    let mut warnings = Vec::new();
    let advisory = holding_sample_advisory(cfg.eps_h, 1, n);
    for y in 0..n {
        let h = holding[y];
        if let Some(f) = h.flag {
            flags.push((y, f));
            continue;
        }
        if h.count < advisory {
            warnings.push(format!(
                "state {y}: {:.1} transitions, fewer than the advisory {:.1} for eps_h={}",
                h.count, advisory, cfg.eps_h
            ));
        }
        match &jumps[y] {
            Some(p) if h.diag < 0.0 => {
                for z in 0..n {
                    if z != y {
                        k[(y, z)] = p[z] * -h.diag;
                    }
                }
            }
            _ => flags.push((y, StateFlag::NoJumps)),
        }
    }
    if flags.iter().filter(|(_, f)| f.is_unestimated()).count() == n {
        return Err(Error::NothingEstimated);
    }
    Ok(RateEstimate { rate: RateMatrix::from_off_diagonal(k)?, flags, warnings })
}

/// Rate matrix from weighted discrete trails.
pub fn estimate_rate_matrix(
    trails: &[DiscreteTrail],
    weights: &[f64],
    tau: f64,
    n: usize,
    cfg: &EstimatorConfig,
) -> Result<RateEstimate> {
    check_states(trails, n)?;
    let c = WeightedCounts::from_trails(trails, weights, n)?;
    if c.total() <= 0.0 {
        return Err(Error::NothingEstimated);
    }
    estimate_from_counts(&c, tau, cfg)
}

/// Which interval rule to apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    /// `eps / (100 kappa K_max)`, targeting per-row TV error `eps`.
    Overall { eps: f64 },
    /// `sqrt(eps_h) / (3 K_max)`, targeting relative holding error `eps_h`.
    Holding { eps_h: f64 },
}

/// `tau = eps / (100 kappa K_max)`.
pub fn recommend_tau(kappa: f64, k_max: f64, eps: f64) -> Result<f64> {
    recommend_tau_with(TauRule::Overall { eps }, kappa, k_max)
}

pub fn recommend_tau_with(rule: TauRule, kappa: f64, k_max: f64) -> Result<f64> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(k_max > 0.0) || !k_max.is_finite() {
        return Err(Error::InvalidArgument(format!("K_max must be positive, got {k_max}")));
    }
    match rule {
        TauRule::Overall { eps } => {
            check_unit("eps", eps)?;
            Ok(eps / (100.0 * kappa * k_max))
        }
        TauRule::Holding { eps_h } => {
            check_unit("eps_h", eps_h)?;
            Ok(eps_h.sqrt() / (3.0 * k_max))
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BadTransitionBound {
    /// `1 - (1 + K_max tau) exp(-K_max tau)`: two or more jumps in one interval.
    pub exact: f64,
    /// `min(1, (K_max tau)^2)`.
    pub bound: f64,
}

pub fn bad_transition_bound(k_max: f64, tau: f64) -> BadTransitionBound {
    let x = k_max * tau;
    let exact = (-(-x).exp_m1() - x * (-x).exp()).max(0.0);
    BadTransitionBound { exact, bound: (x * x).min(1.0) }
}

/// Transitions per state suggested for relative holding error `eps_h`,
/// `eps_h^-2 ln(L n)` with unit constant.
pub fn holding_sample_advisory(eps_h: f64, l: usize, n: usize) -> f64 {
    ((l * n).max(2) as f64).ln() / (eps_h * eps_h)
}

/// Transitions per state suggested for per-row TV error `eps`,
/// `kappa^2 / eps^3 (n + kappa^2 / eps) ln(L n)` with unit constant.
pub fn rate_sample_advisory(kappa: f64, eps: f64, l: usize, n: usize) -> f64 {
    kappa * kappa / eps.powi(3) * (n as f64 + kappa * kappa / eps) * ((l * n).max(2) as f64).ln()
}
