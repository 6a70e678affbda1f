//! Soft clustering of discretized trails.
//!
//! Which method fits depends on the trail length `m` relative to the
//! mixing time of the chains:
//!
//! * short and medium trails: fit a discrete mixture with [`em_discrete`]
//!   (or any other discrete learner, fed by [`three_gram_stats`]) and take
//!   the posterior from [`posterior_soft_assignment`];
//! * long trails: [`spectral_cluster`] on per-trail transition statistics;
//! * very long trails: estimate a chain per trail and group the estimates
//!   ([`very_long_assignment`]).

mod em;
mod model_difference;
mod spectral;
mod three_gram;
mod very_long;

pub use em::{em_discrete, random_discrete_mixture, ClusterConfig, EmFit};
pub use model_difference::{model_difference_check, ModelDifferenceReport, StateDifference};
pub use spectral::{kmeans, spectral_cluster, trail_features, Feature, SpectralConfig, SpectralFit};
pub use three_gram::{three_gram_stats, ThreeGramStats};
pub use very_long::{per_trail_chain, very_long_assignment, TrailChain, VeryLongFit};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{check_states, DiscreteTrail, DtMixture, SoftAssignment};

/// Posterior responsibilities with the observed-data log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub assignment: SoftAssignment,
    /// `sum_x ln sum_l w(x, l)` over trails that are possible under some chain.
    pub log_likelihood: f64,
    /// Trails with zero weight under every chain; their rows are uniform.
    pub flagged: Vec<usize>,
}

/// Transitions of one trail collapsed to `(from, to, count)`.
#[derive(Debug, Clone)]
pub(crate) struct TrailCounts {
    pub first: usize,
    pub pairs: Vec<(usize, usize, f64)>,
}

impl TrailCounts {
    pub fn new(t: &DiscreteTrail) -> Self {
        let mut raw: Vec<(usize, usize)> = t.transitions().collect();
        raw.sort_unstable();
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (y, z) in raw {
            match pairs.last_mut() {
                Some(last) if last.0 == y && last.1 == z => last.2 += 1.0,
                _ => pairs.push((y, z, 1.0)),
            }
        }
        Self { first: t.first(), pairs }
    }
}

pub(crate) fn log_matrices(m: &DtMixture) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let logs = m.chains().iter().map(|c| c.matrix().map(f64::ln)).collect();
    (logs, m.start().map(f64::ln))
}

pub(crate) fn posterior_from_counts(counts: &[TrailCounts], m: &DtMixture) -> Result<Posterior> {
    let l = m.l();
    let (log_t, log_s) = log_matrices(m);
    let rows: Vec<(Vec<f64>, f64, bool)> = counts
        .par_iter()
        .map(|tc| {
            let w: Vec<f64> = (0..l)
                .map(|c| {
                    let mut acc = log_s[(c, tc.first)];
                    for &(y, z, k) in &tc.pairs {
                        if acc == f64::NEG_INFINITY {
                            break;
                        }
                        acc += k * log_t[c][(y, z)];
                    }
                    acc
                })
                .collect();
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY || max.is_nan() {
                return (vec![1.0 / l as f64; l], 0.0, true);
            }
            let e: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            (e.iter().map(|v| v / s).collect(), max + s.ln(), false)
        })
        .collect();
    let r = counts.len();
    let mut a = DMatrix::zeros(r, l);
    let mut ll = 0.0;
    let mut flagged = Vec::new();
    for (x, (row, lx, flag)) in rows.into_iter().enumerate() {
        for c in 0..l {
            a[(x, c)] = row[c];
        }
        if flag {
            flagged.push(x);
        } else {
            ll += lx;
        }
    }
    Ok(Posterior { assignment: SoftAssignment::new(a)?, log_likelihood: ll, flagged })
}

/// `a(x, l)` proportional to `s[l][x0] prod_i T[l][x_i][x_{i+1}]`, computed in
/// log space with max subtraction. Trails impossible under every chain get
/// uniform rows and are listed in `flagged`.
pub fn posterior_soft_assignment(trails: &[DiscreteTrail], m: &DtMixture) -> Result<Posterior> {
    check_states(trails, m.n())?;
    let counts: Vec<TrailCounts> = trails.iter().map(TrailCounts::new).collect();
    posterior_from_counts(&counts, m)
}

pub(crate) fn require_nonempty(trails: &[DiscreteTrail]) -> Result<()> {
    if trails.is_empty() {
        Err(Error::Empty("no trails".into()))
    } else {
        Ok(())
    }
}
