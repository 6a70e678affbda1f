use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{posterior_from_counts, require_nonempty, Posterior, TrailCounts};
use crate::error::{Error, Result};
use crate::simulate::{random_simplex, stream_rng};
use crate::types::{check_states, DiscreteChain, DiscreteTrail, DtMixture, SoftAssignment};

/// Settings for [`em_discrete`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub l: usize,
    pub max_iter: usize,
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    /// Trail-seeded initializations tried when no starting mixture is supplied.
    pub restarts: usize,
    pub seed: u64,
    /// Transition rows with less total soft count than this keep their
    /// previous value in the M-step.
    pub min_row_mass: f64,
}

impl ClusterConfig {
    pub fn new(l: usize, seed: u64) -> Self {
        Self { l, max_iter: 100, tol: 1e-6, restarts: 3, seed, min_row_mass: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidArgument("L must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        if !(self.min_row_mass >= 0.0) {
            return Err(Error::InvalidArgument("min_row_mass must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Result of a discrete EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: DtMixture,
    pub assignment: SoftAssignment,
    pub log_likelihood: f64,
    /// Log-likelihood after initialization and after every M-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Index into `trace` where a collapsed chain was reseeded.
    pub reseeded_at: Option<usize>,
    /// Trails impossible under every fitted chain.
    pub flagged: Vec<usize>,
}

/// Dirichlet(1) transition rows and a uniform start distribution.
pub fn random_discrete_mixture(n: usize, l: usize, tau: Option<f64>, rng: &mut ChaCha8Rng) -> Result<DtMixture> {
    let chains = (0..l)
        .map(|_| {
            let mut t = DMatrix::zeros(n, n);
            for y in 0..n {
                for (z, p) in random_simplex(n, rng).into_iter().enumerate() {
                    t[(y, z)] = p;
                }
            }
            DiscreteChain::new(t, tau)
        })
        .collect::<Result<Vec<_>>>()?;
    DtMixture::new(chains, DMatrix::from_element(l, n, 1.0 / (l * n) as f64))
}

/// Pseudo-count added to every transition when seeding chains.
const SEED_SMOOTHING: f64 = 0.1;

fn frequency_features(tc: &TrailCounts, n: usize) -> Vec<f64> {
    let mut f = vec![0.0; n * n];
    let mut rows = vec![0.0; n];
    for &(y, z, k) in &tc.pairs {
        f[y * n + z] += k;
        rows[y] += k;
    }
    for y in 0..n {
        if rows[y] > 0.0 {
            f[y * n..(y + 1) * n].iter_mut().for_each(|v| *v /= rows[y]);
        }
    }
    f
}

/// Builds each chain from the smoothed pooled counts of one group of trails.
///
/// Group centres are chosen farthest-first in transition-frequency feature
/// space, starting from a random trail, and every trail joins its nearest
/// centre.
fn seeded_discrete_mixture(
    counts: &[TrailCounts],
    n: usize,
    l: usize,
    tau: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<DtMixture> {
    let feats: Vec<Vec<f64>> = counts.iter().map(|tc| frequency_features(tc, n)).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut seeds = vec![rng.random_range(0..counts.len())];
    let mut nearest: Vec<f64> = feats.iter().map(|f| dist(f, &feats[seeds[0]])).collect();
    while seeds.len() < l {
        let next = (0..counts.len()).max_by(|&i, &j| nearest[i].total_cmp(&nearest[j])).unwrap_or(0);
        seeds.push(next);
        for (x, f) in feats.iter().enumerate() {
            nearest[x] = nearest[x].min(dist(f, &feats[next]));
        }
    }
    let mut pooled = vec![DMatrix::from_element(n, n, SEED_SMOOTHING); l];
    for (tc, f) in counts.iter().zip(&feats) {
        let group =
            (0..l).min_by(|&i, &j| dist(f, &feats[seeds[i]]).total_cmp(&dist(f, &feats[seeds[j]]))).unwrap_or(0);
        for &(y, z, k) in &tc.pairs {
            pooled[group][(y, z)] += k;
        }
    }
    let chains = pooled
        .into_iter()
        .map(|mut t| {
            for mut row in t.row_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            DiscreteChain::new(t, tau)
        })
        .collect::<Result<Vec<_>>>()?;
    DtMixture::new(chains, DMatrix::from_element(l, n, 1.0 / (l * n) as f64))
}

fn m_step(counts: &[TrailCounts], a: &SoftAssignment, prev: &DtMixture, min_row_mass: f64) -> Result<DtMixture> {
    let (l, n, r) = (prev.l(), prev.n(), counts.len());
    let tau = prev.chains()[0].tau();
    let chains = (0..l)
        .into_par_iter()
        .map(|c| {
            let mut cm = DMatrix::<f64>::zeros(n, n);
            for (x, tc) in counts.iter().enumerate() {
                let w = a.get(x, c);
                if w == 0.0 {
                    continue;
                }
                for &(y, z, k) in &tc.pairs {
                    cm[(y, z)] += w * k;
                }
            }
            let old = prev.chain(c).matrix();
            let mut t = DMatrix::zeros(n, n);
            for y in 0..n {
                let tot: f64 = cm.row(y).sum();
                for z in 0..n {
                    t[(y, z)] = if tot > 0.0 && tot >= min_row_mass { cm[(y, z)] / tot } else { old[(y, z)] };
                }
            }
            DiscreteChain::new(t, tau)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut s = DMatrix::zeros(l, n);
    for (x, tc) in counts.iter().enumerate() {
        for c in 0..l {
            s[(c, tc.first)] += a.get(x, c) / r as f64;
        }
    }
    let total = s.sum();
    s /= total;
    DtMixture::new(chains, s)
}

/// Replaces chain `dead` with a perturbed copy of the heaviest chain and
/// splits the heaviest chain's start mass between the two.
fn reseed(m: &DtMixture, mass: &[f64], dead: usize, rng: &mut ChaCha8Rng) -> Result<DtMixture> {
    let heavy = (0..mass.len()).max_by(|&i, &j| mass[i].total_cmp(&mass[j])).unwrap_or(0);
    let n = m.n();
    let src = m.chain(heavy).matrix();
    let mut t = DMatrix::zeros(n, n);
    for y in 0..n {
        let noise = random_simplex(n, rng);
        for z in 0..n {
            t[(y, z)] = 0.7 * src[(y, z)] + 0.3 * noise[z];
        }
    }
    let mut chains = m.chains().to_vec();
    chains[dead] = DiscreteChain::new(t, m.chain(heavy).tau())?;
    let mut s = m.start().clone();
    for y in 0..n {
        let half = 0.5 * (s[(heavy, y)] + s[(dead, y)]);
        s[(heavy, y)] = half;
        s[(dead, y)] = half;
    }
    DtMixture::new(chains, s)
}

fn run(counts: &[TrailCounts], init: DtMixture, cfg: &ClusterConfig, rng: &mut ChaCha8Rng) -> Result<EmFit> {
    let r = counts.len() as f64;
    let mut mix = init;
    let mut post: Posterior = posterior_from_counts(counts, &mix)?;
    let mut trace = vec![post.log_likelihood];
    let mut reseeded_at = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut next = m_step(counts, &post.assignment, &mix, cfg.min_row_mass)?;
        let mut next_post = posterior_from_counts(counts, &next)?;
        if reseeded_at.is_none() && cfg.l > 1 {
            let mass = next_post.assignment.chain_mass();
            if let Some(dead) = (0..cfg.l).find(|&c| mass[c] < 1e-6 * r) {
                next = reseed(&next, &mass, dead, rng)?;
                next_post = posterior_from_counts(counts, &next)?;
                reseeded_at = Some(trace.len());
            }
        }
        let prev = post.log_likelihood;
        mix = next;
        post = next_post;
        trace.push(post.log_likelihood);
        if reseeded_at != Some(trace.len() - 1) && (post.log_likelihood - prev).abs() <= cfg.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        log_likelihood: post.log_likelihood,
        assignment: post.assignment,
        flagged: post.flagged,
        mixture: mix,
        trace,
        iterations,
        converged,
        reseeded_at,
    })
}

/// Fits an `L`-chain discrete mixture by expectation maximization.
///
/// With `init` the run starts there; otherwise `cfg.restarts` trail-seeded
/// initializations are tried and the highest final log-likelihood wins.
/// Transition rows whose soft counts total less than `cfg.min_row_mass`
/// (or zero) keep their previous value.
pub fn em_discrete(trails: &[DiscreteTrail], n: usize, cfg: &ClusterConfig, init: Option<&DtMixture>) -> Result<EmFit> {
    cfg.validate()?;
    require_nonempty(trails)?;
    check_states(trails, n)?;
    let tau = Some(trails[0].tau());
    let counts: Vec<TrailCounts> = trails.iter().map(TrailCounts::new).collect();
    if let Some(m) = init {
        if m.l() != cfg.l || m.n() != n {
            return Err(Error::Dimension(format!(
                "initial mixture is {}x{}, expected L={} n={n}",
                m.l(),
                m.n(),
                cfg.l
            )));
        }
        let mut rng = stream_rng(cfg.seed, 0);
        return run(&counts, m.clone(), cfg, &mut rng);
    }
    let mut best: Option<EmFit> = None;
    for k in 0..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, k as u64);
        let start = seeded_discrete_mixture(&counts, n, cfg.l, tau, &mut rng)?;
        let fit = run(&counts, start, cfg, &mut rng)?;
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    best.ok_or(Error::NothingEstimated)
}
