//! Synthetic mixtures, continuous-time trail sampling, and discretization.

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{ContinuousTrail, CtMixture, DiscreteTrail, Event, RateMatrix};

/// Settings for [`random_mixture`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n: usize,
    pub l: usize,
    /// Off-diagonal rates are drawn from `Uniform[0, rate_upper]`.
    pub rate_upper: f64,
    pub seed: u64,
    /// States whose rows are forced to zero.
    pub absorbing: Vec<usize>,
}

impl GeneratorConfig {
    pub fn new(n: usize, l: usize, seed: u64) -> Self {
        Self { n, l, rate_upper: 1.0, seed, absorbing: Vec::new() }
    }

    pub fn with_rate_upper(mut self, rate_upper: f64) -> Self {
        self.rate_upper = rate_upper;
        self
    }

    pub fn with_absorbing(mut self, absorbing: Vec<usize>) -> Self {
        self.absorbing = absorbing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("n must be >= 2, got {}", self.n)));
        }
        if self.l < 1 {
            return Err(Error::InvalidArgument("L must be >= 1".into()));
        }
        if !(self.rate_upper > 0.0) || !self.rate_upper.is_finite() {
            return Err(Error::InvalidArgument(format!("rate_upper must be positive, got {}", self.rate_upper)));
        }
        let mut abs = self.absorbing.clone();
        abs.sort_unstable();
        abs.dedup();
        if abs.len() != self.absorbing.len() {
            return Err(Error::InvalidArgument("absorbing states repeat".into()));
        }
        if abs.len() >= self.n || abs.iter().any(|&s| s >= self.n) {
            return Err(Error::InvalidArgument("absorbing states must be fewer than n and < n".into()));
        }
        Ok(())
    }
}

/// RNG for stream `stream` of `seed`. Trails sampled with distinct streams
/// are independent and do not depend on evaluation order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rate matrix with independent `Uniform[0, upper]` off-diagonal rates;
/// rows of `absorbing` states are zero.
pub fn random_rate_matrix<R: Rng + ?Sized>(
    n: usize,
    upper: f64,
    absorbing: &[usize],
    rng: &mut R,
) -> Result<RateMatrix> {
    let unif = Uniform::new_inclusive(0.0, upper).map_err(|e| Error::InvalidArgument(format!("rate bound: {e}")))?;
    let mut k = DMatrix::zeros(n, n);
    for y in 0..n {
        for z in 0..n {
            if y != z {
                k[(y, z)] = unif.sample(rng);
            }
        }
        if absorbing.contains(&y) {
            k.row_mut(y).fill(0.0);
        }
    }
    RateMatrix::from_off_diagonal(k)
}

/// Uniform draw from the probability simplex with `len` cells.
pub fn random_simplex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let exp = Exp::new(1.0).expect("unit rate");
    let mut v: Vec<f64> = (0..len).map(|_| exp.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random mixture: uniform rates per chain and a start matrix drawn
/// uniformly from the simplex over all `L * n` (chain, state) cells.
pub fn random_mixture(cfg: &GeneratorConfig) -> Result<CtMixture> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chains = (0..cfg.l)
        .map(|_| random_rate_matrix(cfg.n, cfg.rate_upper, &cfg.absorbing, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let start = random_simplex(cfg.l * cfg.n, &mut rng);
    CtMixture::new(chains, DMatrix::from_row_slice(cfg.l, cfg.n, &start))
}

/// Two-chain mixture `(K, f K)` with uniform starting probabilities.
pub fn proportional_mixture(k: &RateMatrix, f: f64) -> Result<CtMixture> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::InvalidArgument(format!("factor must be positive, got {f}")));
    }
    let n = k.n();
    let start = DMatrix::from_element(2, n, 1.0 / (2 * n) as f64);
    CtMixture::new(vec![k.clone(), k.scaled(f)?], start)
}

fn sample_index<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// Samples one trail: draws (chain, state) from the start matrix, then
/// alternates exponential holding times and jumps until the horizon is
/// passed or a state without exits is entered.
pub fn sample_continuous_trail<R: Rng + ?Sized>(m: &CtMixture, horizon: f64, rng: &mut R) -> Result<ContinuousTrail> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if !(m.start().sum() > 0.0) {
        return Err(Error::InvalidArgument("start matrix is all zero".into()));
    }
    let n = m.n();
    let cell = sample_index(m.start().transpose().iter().copied(), rng);
    // transpose makes the column-major iterator row-major
    let (l, mut y) = (cell / n, cell % n);
    let k = m.chain(l);
    let mut events = vec![Event { state: y, time: 0.0 }];
    let mut t = 0.0;
    let mut absorbed = false;
    loop {
        let rate = k.exit_rate(y);
        if rate <= 0.0 {
            absorbed = true;
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(rng);
        if t > horizon {
            break;
        }
        let z = sample_index((0..n).map(|z| if z == y { 0.0 } else { k.rate(y, z) }), rng);
        events.push(Event { state: z, time: t });
        y = z;
    }
    Ok(ContinuousTrail::new(events, horizon, absorbed)?.with_label(Some(l)))
}

/// `r` trails, trail `i` drawn from stream `i` of `seed`.
pub fn sample_trails(m: &CtMixture, r: usize, horizon: f64, seed: u64) -> Result<Vec<ContinuousTrail>> {
    (0..r).into_par_iter().map(|i| sample_continuous_trail(m, horizon, &mut stream_rng(seed, i as u64))).collect()
}

fn check_observable(x: &ContinuousTrail, tau: f64, m: usize) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let needed = (m - 1) as f64 * tau;
    if !x.absorbed() && needed > x.horizon() * (1.0 + 1e-12) {
        return Err(Error::TrailTooShort { needed, horizon: x.horizon() });
    }
    Ok(())
}

/// Observes `x` at `0, tau, ..., (m-1) tau`. A jump at exactly `i tau` is
/// visible at index `i`; absorbed trails repeat their final state.
pub fn discretize(x: &ContinuousTrail, tau: f64, m: usize) -> Result<DiscreteTrail> {
    check_observable(x, tau, m)?;
    let states = (0..m).map(|i| x.state_at(i as f64 * tau)).collect();
    DiscreteTrail::new(states, tau)
}

/// Largest `m` such that `x` can be observed `m` times at interval `tau`.
pub fn max_observations(x: &ContinuousTrail, tau: f64) -> usize {
    ((x.horizon() / tau) * (1.0 + 1e-12)).floor() as usize + 1
}

/// Discretizes a trail set. With `m = None` every trail is observed as often
/// as its horizon allows.
pub fn discretize_all(trails: &[ContinuousTrail], tau: f64, m: Option<usize>) -> Result<Vec<DiscreteTrail>> {
    trails.par_iter().map(|x| discretize(x, tau, m.unwrap_or_else(|| max_observations(x, tau)))).collect()
}

/// Number of observation intervals `[i tau, (i+1) tau]`, `i < m - 1`, during
/// which the trail enters some state that is neither the state observed at
/// the start nor the one observed at the end of the interval.
pub fn count_bad_transitions(x: &ContinuousTrail, tau: f64, m: usize) -> Result<usize> {
    check_observable(x, tau, m)?;
    let events = x.events();
    let mut bad = 0;
    for i in 0..m.saturating_sub(1) {
        let (lo, hi) = (i as f64 * tau, (i + 1) as f64 * tau);
        let y = x.state_at(lo);
        let y_next = x.state_at(hi);
        let first = events.partition_point(|e| e.time <= lo);
        let skipped = events[first..].iter().take_while(|e| e.time < hi).any(|e| e.state != y && e.state != y_next);
        if skipped {
            bad += 1;
        }
    }
    Ok(bad)
}
