use nalgebra::DMatrix;

use crate::cluster::kmeans;
use crate::error::{Error, Result};
use crate::estimators::estimate_holding;
use crate::simulate::{random_rate_matrix, random_simplex, stream_rng};
use crate::types::{check_states, CtMixture, DiscreteTrail, DtMixture, RateMatrix, WeightedCounts};

/// Starting mixtures for discrete EM when the chains may differ mainly in
/// their speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitStrategy {
    /// Chain `l` draws rates uniformly from `[0, f^l]`.
    Good { f: f64 },
    /// Trails are grouped by their empirical exit rate; each chain gets the
    /// holding rates of its group and random jump probabilities.
    Learned,
    /// Every chain draws rates uniformly from `[0, 1]`.
    Random,
}

impl InitStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            InitStrategy::Good { .. } => "good",
            InitStrategy::Learned => "learned",
            InitStrategy::Random => "random",
        }
    }
}

fn uniform_start(chains: Vec<RateMatrix>, n: usize) -> Result<CtMixture> {
    let l = chains.len();
    CtMixture::new(chains, DMatrix::from_element(l, n, 1.0 / (l * n) as f64))
}

fn learned_chains(trails: &[DiscreteTrail], n: usize, l: usize, seed: u64) -> Result<Vec<RateMatrix>> {
    let tau = trails[0].tau();
    let speed: Vec<Vec<f64>> = trails
        .iter()
        .map(|t| {
            let steps = (t.len().max(2) - 1) as f64;
            let stays = t.transitions().filter(|(y, z)| y == z).count() as f64;
            let q = ((stays + 0.5) / (steps + 1.0)).min(1.0);
            vec![-q.ln() / tau]
        })
        .collect();
    let groups =
        if trails.len() >= l { kmeans(&speed, l, 5, seed)?.0 } else { (0..trails.len()).map(|x| x % l).collect() };
    let mut rng = stream_rng(seed, 0x696e6974);
    let mut pooled = WeightedCounts::zeros(n);
    for t in trails {
        pooled.add_trail(t, 1.0);
    }
    let pooled_hold = estimate_holding(&pooled, tau, 1.0)?;
    (0..l)
        .map(|c| {
            let mut counts = WeightedCounts::zeros(n);
            for (x, t) in trails.iter().enumerate() {
                if groups[x] == c {
                    counts.add_trail(t, 1.0);
                }
            }
            let hold = estimate_holding(&counts, tau, 1.0)?;
            let mut k = DMatrix::zeros(n, n);
            for y in 0..n {
                let pick = |d: f64| d.is_finite() && d < 0.0;
                let exit = if pick(hold[y].diag) {
                    -hold[y].diag
                } else if pick(pooled_hold[y].diag) {
                    -pooled_hold[y].diag
                } else {
                    1.0 / (tau * n as f64)
                };
                let p = random_simplex(n - 1, &mut rng);
                let mut i = 0;
                for z in 0..n {
                    if z != y {
                        k[(y, z)] = p[i] * exit;
                        i += 1;
                    }
                }
            }
            RateMatrix::from_off_diagonal(k)
        })
        .collect()
}

/// Continuous-time starting mixture for the given strategy.
pub fn initial_ct_mixture(
    strategy: InitStrategy,
    trails: &[DiscreteTrail],
    n: usize,
    l: usize,
    seed: u64,
) -> Result<CtMixture> {
    if l == 0 || n < 2 {
        return Err(Error::InvalidArgument("need L >= 1 and n >= 2".into()));
    }
    let mut rng = stream_rng(seed, 0x67656e);
    let chains = match strategy {
        InitStrategy::Good { f } => {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::InvalidArgument(format!("factor must be positive, got {f}")));
            }
            (0..l).map(|c| random_rate_matrix(n, f.powi(c as i32), &[], &mut rng)).collect::<Result<Vec<_>>>()?
        }
        InitStrategy::Random => {
            (0..l).map(|_| random_rate_matrix(n, 1.0, &[], &mut rng)).collect::<Result<Vec<_>>>()?
        }
        InitStrategy::Learned => {
            if trails.is_empty() {
                return Err(Error::Empty("no trails".into()));
            }
            check_states(trails, n)?;
            learned_chains(trails, n, l, seed)?
        }
    };
    uniform_start(chains, n)
}

/// Discrete starting mixture for EM at the trails' interval.
pub fn initial_mixture(
    strategy: InitStrategy,
    trails: &[DiscreteTrail],
    n: usize,
    l: usize,
    seed: u64,
) -> Result<DtMixture> {
    let tau = trails.first().map(|t| t.tau()).ok_or_else(|| Error::Empty("no trails".into()))?;
    initial_ct_mixture(strategy, trails, n, l, seed)?.discretize(tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learned_separates_fast_and_slow() {
        let mut trails = Vec::new();
        for i in 0..20 {
            let slow: Vec<usize> = (0..50).map(|k| (k / 10 + i) % 2).collect();
            let fast: Vec<usize> = (0..50).map(|k| (k / 2 + i) % 2).collect();
            trails.push(DiscreteTrail::new(slow, 0.1).unwrap());
            trails.push(DiscreteTrail::new(fast, 0.1).unwrap());
        }
        let m = initial_ct_mixture(InitStrategy::Learned, &trails, 2, 2, 1).unwrap();
        let e0 = m.chain(0).exit_rate(0);
        let e1 = m.chain(1).exit_rate(0);
        assert!(e0.max(e1) > 3.0 * e0.min(e1), "{e0} {e1}");
    }

    #[test]
    fn good_scales_second_chain() {
        let trails = vec![DiscreteTrail::new(vec![0, 1], 0.1).unwrap()];
        let m = initial_ct_mixture(InitStrategy::Good { f: 5.0 }, &trails, 4, 2, 3).unwrap();
        assert!(m.chain(0).max_exit_rate() <= 3.0);
        assert!(m.chain(1).max_exit_rate() <= 15.0);
        let d = initial_mixture(InitStrategy::Random, &trails, 4, 2, 3).unwrap();
        assert_eq!(d.l(), 2);
    }
}
