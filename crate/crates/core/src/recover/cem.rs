use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::simulate::stream_rng;
use crate::types::{ContinuousTrail, CtMixture, RateMatrix, SoftAssignment};

#[derive(Debug, Clone, PartialEq)]
pub struct CemConfig {
    pub l: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl CemConfig {
    pub fn new(l: usize, seed: u64) -> Self {
        Self { l, max_iter: 100, tol: 1e-6, restarts: 3, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.l == 0 || self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("L, max_iter and restarts must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CemFit {
    pub mixture: CtMixture,
    pub assignment: SoftAssignment,
    pub log_likelihood: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reseeded_at: Option<usize>,
    /// `(chain, state)` pairs with zero soft holding time; their rows are zero.
    pub unestimated: Vec<(usize, usize)>,
}

/// Sufficient statistics of one continuous path.
#[derive(Debug, Clone)]
pub struct PathStats {
    pub first: usize,
    pub jumps: Vec<(usize, usize, f64)>,
    /// Time spent in each state up to the horizon.
    pub holding: Vec<f64>,
}

impl PathStats {
    pub fn new(x: &ContinuousTrail, n: usize) -> Result<Self> {
        if x.state_bound() > n {
            return Err(Error::InvalidArgument(format!("trail visits state {} but n = {n}", x.state_bound() - 1)));
        }
        let ev = x.events();
        let mut holding = vec![0.0; n];
        let mut raw = Vec::new();
        for w in ev.windows(2) {
            holding[w[0].state] += w[1].time - w[0].time;
            raw.push((w[0].state, w[1].state));
        }
        let last = ev[ev.len() - 1];
        holding[last.state] += x.horizon() - last.time;
        raw.sort_unstable();
        let mut jumps: Vec<(usize, usize, f64)> = Vec::new();
        for (y, z) in raw {
            match jumps.last_mut() {
                Some(j) if j.0 == y && j.1 == z => j.2 += 1.0,
                _ => jumps.push((y, z, 1.0)),
            }
        }
        Ok(Self { first: x.initial_state(), jumps, holding })
    }

    /// `ln s_{x0} + sum ln K_yz + sum_y K_yy H_y`.
    pub fn log_likelihood(&self, k: &RateMatrix, s: f64) -> f64 {
        let mut ll = s.ln();
        for &(y, z, c) in &self.jumps {
            ll += c * k.rate(y, z).ln();
        }
        for (y, h) in self.holding.iter().enumerate() {
            if *h > 0.0 {
                ll -= k.exit_rate(y) * h;
            }
        }
        ll
    }
}

/// Log path weight of `x` under chain `l` of `m`.
pub fn continuous_log_weight(x: &ContinuousTrail, m: &CtMixture, l: usize) -> Result<f64> {
    let st = PathStats::new(x, m.n())?;
    Ok(st.log_likelihood(m.chain(l), m.start()[(l, st.first)]))
}

struct Estep {
    a: SoftAssignment,
    ll: f64,
}

fn e_step(stats: &[PathStats], m: &CtMixture) -> Result<Estep> {
    let l = m.l();
    let rows: Vec<(Vec<f64>, f64)> = stats
        .par_iter()
        .map(|st| {
            let w: Vec<f64> = (0..l).map(|c| st.log_likelihood(m.chain(c), m.start()[(c, st.first)])).collect();
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return (vec![1.0 / l as f64; l], 0.0);
            }
            let e: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            (e.iter().map(|v| v / s).collect(), max + s.ln())
        })
        .collect();
    let mut a = DMatrix::zeros(stats.len(), l);
    let mut ll = 0.0;
    for (x, (row, lx)) in rows.into_iter().enumerate() {
        for c in 0..l {
            a[(x, c)] = row[c];
        }
        ll += lx;
    }
    Ok(Estep { a: SoftAssignment::new(a)?, ll })
}

fn m_step(stats: &[PathStats], a: &SoftAssignment, n: usize) -> Result<(CtMixture, Vec<(usize, usize)>)> {
    let (l, r) = (a.l(), stats.len());
    let per_chain: Vec<(RateMatrix, Vec<usize>)> = (0..l)
        .into_par_iter()
        .map(|c| {
            let mut jumps = DMatrix::<f64>::zeros(n, n);
            let mut hold = vec![0.0; n];
            for (x, st) in stats.iter().enumerate() {
                let w = a.get(x, c);
                if w == 0.0 {
                    continue;
                }
                for &(y, z, k) in &st.jumps {
                    jumps[(y, z)] += w * k;
                }
                for y in 0..n {
                    hold[y] += w * st.holding[y];
                }
            }
            let mut missing = Vec::new();
            let mut k = DMatrix::zeros(n, n);
            for y in 0..n {
                if hold[y] > 0.0 {
                    for z in 0..n {
                        if z != y {
                            k[(y, z)] = jumps[(y, z)] / hold[y];
                        }
                    }
                } else {
                    missing.push(y);
                }
            }
            Ok((RateMatrix::from_off_diagonal(k)?, missing))
        })
        .collect::<Result<_>>()?;
    let mut s = DMatrix::zeros(l, n);
    for (x, st) in stats.iter().enumerate() {
        for c in 0..l {
            s[(c, st.first)] += a.get(x, c) / r as f64;
        }
    }
    let mut chains = Vec::with_capacity(l);
    let mut unestimated = Vec::new();
    for (c, (k, missing)) in per_chain.into_iter().enumerate() {
        unestimated.extend(missing.into_iter().map(|y| (c, y)));
        chains.push(k);
    }
    Ok((CtMixture::new(chains, s)?, unestimated))
}

fn random_start(stats: &[PathStats], n: usize, l: usize, rng: &mut ChaCha8Rng) -> Result<CtMixture> {
    let jumps: f64 = stats.iter().flat_map(|s| s.jumps.iter().map(|j| j.2)).sum();
    let time: f64 = stats.iter().flat_map(|s| s.holding.iter()).sum();
    let mean = if time > 0.0 && jumps > 0.0 { jumps / time / (n.max(2) - 1) as f64 } else { 1.0 };
    let chains = (0..l)
        .map(|_| {
            let k = DMatrix::from_fn(n, n, |y, z| if y == z { 0.0 } else { mean * (0.2 + 1.6 * rng.random::<f64>()) });
            RateMatrix::from_off_diagonal(k)
        })
        .collect::<Result<Vec<_>>>()?;
    CtMixture::new(chains, DMatrix::from_element(l, n, 1.0 / (l * n) as f64))
}

fn reseed(m: &CtMixture, mass: &[f64], dead: usize, rng: &mut ChaCha8Rng) -> Result<CtMixture> {
    let heavy = (0..mass.len()).max_by(|&i, &j| mass[i].total_cmp(&mass[j])).unwrap_or(0);
    let n = m.n();
    let src = m.chain(heavy);
    let k = DMatrix::from_fn(n, n, |y, z| if y == z { 0.0 } else { src.rate(y, z) * (0.5 + rng.random::<f64>()) });
    let mut chains = m.chains().to_vec();
    chains[dead] = RateMatrix::from_off_diagonal(k)?;
    let mut s = m.start().clone();
    for y in 0..n {
        let half = 0.5 * (s[(heavy, y)] + s[(dead, y)]);
        s[(heavy, y)] = half;
        s[(dead, y)] = half;
    }
    CtMixture::new(chains, s)
}

fn run(stats: &[PathStats], n: usize, init: CtMixture, cfg: &CemConfig, rng: &mut ChaCha8Rng) -> Result<CemFit> {
    let r = stats.len() as f64;
    let mut mix = init;
    let mut e = e_step(stats, &mix)?;
    let mut trace = vec![e.ll];
    let mut unestimated = Vec::new();
    let mut reseeded_at = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (mut next, missing) = m_step(stats, &e.a, n)?;
        let mut next_e = e_step(stats, &next)?;
        unestimated = missing;
        if reseeded_at.is_none() && cfg.l > 1 {
            let mass = next_e.a.chain_mass();
            if let Some(dead) = (0..cfg.l).find(|&c| mass[c] < 1e-6 * r) {
                next = reseed(&next, &mass, dead, rng)?;
                next_e = e_step(stats, &next)?;
                reseeded_at = Some(trace.len());
            }
        }
        let prev = e.ll;
        mix = next;
        e = next_e;
        trace.push(e.ll);
        if reseeded_at != Some(trace.len() - 1) && (e.ll - prev).abs() <= cfg.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(CemFit {
        mixture: mix,
        assignment: e.a,
        log_likelihood: e.ll,
        trace,
        iterations,
        converged,
        reseeded_at,
        unestimated,
    })
}

/// Expectation maximization on fully observed continuous paths.
///
/// The M-step is closed form: the soft number of `y -> z` jumps divided by
/// the soft time spent in `y`. The final dwell up to each trail's horizon
/// counts as holding time.
pub fn em_continuous(
    trails: &[ContinuousTrail],
    n: usize,
    cfg: &CemConfig,
    init: Option<&CtMixture>,
) -> Result<CemFit> {
    cfg.validate()?;
    if trails.is_empty() {
        return Err(Error::Empty("no trails".into()));
    }
    let stats: Vec<PathStats> = trails.iter().map(|x| PathStats::new(x, n)).collect::<Result<_>>()?;
    if let Some(m) = init {
        if m.l() != cfg.l || m.n() != n {
            return Err(Error::Dimension(format!(
                "initial mixture is {}x{}, expected L={} n={n}",
                m.l(),
                m.n(),
                cfg.l
            )));
        }
        return run(&stats, n, m.clone(), cfg, &mut stream_rng(cfg.seed, 0));
    }
    let mut best: Option<CemFit> = None;
    for k in 0..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, k as u64);
        let start = random_start(&stats, n, cfg.l, &mut rng)?;
        let fit = run(&stats, n, start, cfg, &mut rng)?;
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    best.ok_or(Error::NothingEstimated)
}
