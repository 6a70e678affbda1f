use crate::error::{Error, Result};
use crate::types::{check_states, DiscreteTrail};

/// Empirical distribution of consecutive observation triples `(x_i, x_{i+1}, x_{i+2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeGramStats {
    n: usize,
    p: Vec<f64>,
    /// Number of triples counted.
    pub used: usize,
}

impl ThreeGramStats {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.p[(x * self.n + y) * self.n + z]
    }

    /// Flat `n^3` table indexed by `(x * n + y) * n + z`.
    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }
}

/// Frequencies of every overlapping window of three observations, pooled
/// over all trails.
pub fn three_gram_stats(trails: &[DiscreteTrail], n: usize) -> Result<ThreeGramStats> {
    check_states(trails, n)?;
    let mut p = vec![0.0; n * n * n];
    let mut used = 0usize;
    for t in trails {
        for w in t.states().windows(3) {
            p[(w[0] * n + w[1]) * n + w[2]] += 1.0;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Empty("no trail has three observations".into()));
    }
    p.iter_mut().for_each(|v| *v /= used as f64);
    Ok(ThreeGramStats { n, p, used })
}
