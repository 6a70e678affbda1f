use nalgebra::DMatrix;
use rayon::prelude::*;

use super::mle::{mle_rate_matrix, MleConfig, MleFit};
use crate::cluster::{
    em_discrete, posterior_soft_assignment, spectral_cluster, very_long_assignment, ClusterConfig, SpectralConfig,
};
use crate::error::{Error, Result};
use crate::simulate::discretize_all;
use crate::types::{
    check_states, ContinuousTrail, CtMixture, DiscreteTrail, DtMixture, RateMatrix, SoftAssignment, WeightedCounts,
};

/// `C_yz = sum_x a(x, l) #{i : x_i = y, x_{i+1} = z}`.
pub fn weighted_counts(trails: &[DiscreteTrail], a: &SoftAssignment, l: usize, n: usize) -> Result<WeightedCounts> {
    if a.r() != trails.len() {
        return Err(Error::Dimension(format!("{} assignment rows for {} trails", a.r(), trails.len())));
    }
    if l >= a.l() {
        return Err(Error::InvalidArgument(format!("chain {l} out of range for L={}", a.l())));
    }
    let weights: Vec<f64> = (0..a.r()).map(|x| a.get(x, l)).collect();
    WeightedCounts::from_trails(trails, &weights, n)
}

/// How trails are assigned to chains before the per-chain MLE.
#[derive(Debug, Clone)]
pub enum FitMethod {
    /// Discrete EM, posterior of the fitted discrete mixture.
    Dem { cluster: ClusterConfig, init: Option<DtMixture> },
    /// Spectral projection and k-means (hard assignment).
    Ktt(SpectralConfig),
    /// Per-trail chains grouped by agglomeration (hard assignment).
    VeryLong,
    /// Posterior under a supplied discrete mixture.
    Posterior(DtMixture),
    /// A supplied assignment, e.g. ground-truth labels.
    Assignment(SoftAssignment),
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub mixture: CtMixture,
    pub assignment: SoftAssignment,
    /// Per-chain optimizer results; `None` for empty chains.
    pub mle: Vec<Option<MleFit>>,
    /// Chains whose assignment mass is below `1e-6 r`; their rates are zero.
    pub empty_chains: Vec<usize>,
    /// Log-likelihood of the clustering stage when it has one.
    pub cluster_log_likelihood: Option<f64>,
    pub cluster_iterations: usize,
    pub flagged_trails: Vec<usize>,
}

struct Clustering {
    assignment: SoftAssignment,
    log_likelihood: Option<f64>,
    iterations: usize,
    flagged: Vec<usize>,
}

fn cluster(trails: &[DiscreteTrail], n: usize, l: usize, method: &FitMethod) -> Result<Clustering> {
    let plain = |assignment| Clustering { assignment, log_likelihood: None, iterations: 0, flagged: Vec::new() };
    match method {
        FitMethod::Dem { cluster, init } => {
            if cluster.l != l {
                return Err(Error::InvalidArgument(format!("cluster config has L={}, expected {l}", cluster.l)));
            }
            let fit = em_discrete(trails, n, cluster, init.as_ref())?;
            Ok(Clustering {
                assignment: fit.assignment,
                log_likelihood: Some(fit.log_likelihood),
                iterations: fit.iterations,
                flagged: fit.flagged,
            })
        }
        FitMethod::Ktt(cfg) => {
            if cfg.l != l {
                return Err(Error::InvalidArgument(format!("spectral config has L={}, expected {l}", cfg.l)));
            }
            Ok(plain(spectral_cluster(trails, n, cfg)?.assignment))
        }
        FitMethod::VeryLong => Ok(plain(very_long_assignment(trails, n, l)?.assignment)),
        FitMethod::Posterior(m) => {
            if m.l() != l {
                return Err(Error::Dimension(format!("mixture has {} chains, expected {l}", m.l())));
            }
            let p = posterior_soft_assignment(trails, m)?;
            Ok(Clustering {
                assignment: p.assignment,
                log_likelihood: Some(p.log_likelihood),
                iterations: 0,
                flagged: p.flagged,
            })
        }
        FitMethod::Assignment(a) => {
            if a.l() != l || a.r() != trails.len() {
                return Err(Error::Dimension(format!(
                    "assignment is {}x{}, expected {}x{l}",
                    a.r(),
                    a.l(),
                    trails.len()
                )));
            }
            Ok(plain(a.clone()))
        }
    }
}

/// `s_y^l = (1/r) sum_{x : x_0 = y} a(x, l)`.
pub fn start_probabilities(trails: &[DiscreteTrail], a: &SoftAssignment, n: usize) -> DMatrix<f64> {
    let r = trails.len() as f64;
    let mut s = DMatrix::zeros(a.l(), n);
    for (x, t) in trails.iter().enumerate() {
        for c in 0..a.l() {
            s[(c, t.first())] += a.get(x, c) / r;
        }
    }
    s
}

/// Clusters the trails, then fits each chain's rates by weighted maximum
/// likelihood on its soft counts. Starting probabilities are the
/// assignment-weighted initial-state frequencies.
pub fn fit_mixture(
    trails: &[DiscreteTrail],
    n: usize,
    l: usize,
    method: &FitMethod,
    mle: &MleConfig,
) -> Result<MixtureFit> {
    if l == 0 {
        return Err(Error::InvalidArgument("L must be positive".into()));
    }
    if trails.is_empty() {
        return Err(Error::Empty("no trails".into()));
    }
    check_states(trails, n)?;
    mle.validate()?;
    let tau = trails[0].tau();
    if trails.iter().any(|t| t.tau() != tau) {
        return Err(Error::InvalidArgument("trails were discretized at different intervals".into()));
    }
    let cl = cluster(trails, n, l, method)?;
    let a = &cl.assignment;
    let r = trails.len() as f64;
    let mass = a.chain_mass();
    let fits: Vec<Option<MleFit>> = (0..l)
        .into_par_iter()
        .map(|c| {
            if mass[c] < 1e-6 * r {
                return Ok(None);
            }
            let counts = weighted_counts(trails, a, c, n)?;
            if counts.total() <= 0.0 {
                return Ok(None);
            }
            mle_rate_matrix(&counts, tau, mle).map(Some)
        })
        .collect::<Result<_>>()?;
    let empty_chains: Vec<usize> = (0..l).filter(|&c| fits[c].is_none()).collect();
    let chains = fits
        .iter()
        .map(|f| match f {
            Some(f) => Ok(f.rate.clone()),
            None => RateMatrix::new(DMatrix::zeros(n, n)),
        })
        .collect::<Result<Vec<_>>>()?;
    let start = start_probabilities(trails, a, n);
    Ok(MixtureFit {
        mixture: CtMixture::new(chains, start)?,
        assignment: cl.assignment,
        mle: fits,
        empty_chains,
        cluster_log_likelihood: cl.log_likelihood,
        cluster_iterations: cl.iterations,
        flagged_trails: cl.flagged,
    })
}

/// Discretizes continuous trails at `tau` (first `m` observations, or as
/// many as every trail supports) and runs [`fit_mixture`].
pub fn fit_mixture_continuous(
    trails: &[ContinuousTrail],
    n: usize,
    tau: f64,
    m: Option<usize>,
    l: usize,
    method: &FitMethod,
    mle: &MleConfig,
) -> Result<MixtureFit> {
    let discrete = discretize_all(trails, tau, m)?;
    fit_mixture(&discrete, n, l, method, mle)
}
