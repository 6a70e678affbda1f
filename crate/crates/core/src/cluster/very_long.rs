use nalgebra::DMatrix;
use rayon::prelude::*;

use super::require_nonempty;
use crate::error::{Error, Result};
use crate::types::{check_states, DiscreteChain, DiscreteTrail, DtMixture, SoftAssignment, WeightedCounts};

/// Empirical transition matrix of a single trail.
#[derive(Debug, Clone)]
pub struct TrailChain {
    pub chain: DiscreteChain,
    /// States with no outgoing transition in the trail; their rows are uniform.
    pub unvisited: Vec<usize>,
}

fn normalize_counts(c: &DMatrix<f64>, tau: f64) -> Result<TrailChain> {
    let n = c.nrows();
    let mut t = DMatrix::zeros(n, n);
    let mut unvisited = Vec::new();
    for y in 0..n {
        let tot = c.row(y).sum();
        if tot > 0.0 {
            for z in 0..n {
                t[(y, z)] = c[(y, z)] / tot;
            }
        } else {
            unvisited.push(y);
            t.row_mut(y).fill(1.0 / n as f64);
        }
    }
    Ok(TrailChain { chain: DiscreteChain::new(t, Some(tau))?, unvisited })
}

pub fn per_trail_chain(trail: &DiscreteTrail, n: usize) -> Result<TrailChain> {
    check_states(std::slice::from_ref(trail), n)?;
    let c = WeightedCounts::from_trails(std::slice::from_ref(trail), &[1.0], n)?;
    normalize_counts(c.matrix(), trail.tau())
}

#[derive(Debug, Clone)]
pub struct VeryLongFit {
    pub mixture: DtMixture,
    pub assignment: SoftAssignment,
    pub per_trail: Vec<TrailChain>,
}

/// Mean total-variation distance between transition rows over states visited
/// in both trails; 1 when no state is shared.
fn chain_distance(a: &TrailChain, b: &TrailChain, visited_a: &[bool], visited_b: &[bool]) -> f64 {
    let n = a.chain.n();
    let (mut sum, mut k) = (0.0, 0usize);
    for y in 0..n {
        if visited_a[y] && visited_b[y] {
            let d: f64 = (0..n).map(|z| (a.chain.prob(y, z) - b.chain.prob(y, z)).abs()).sum();
            sum += 0.5 * d;
            k += 1;
        }
    }
    if k == 0 {
        1.0
    } else {
        sum / k as f64
    }
}

/// Estimates one chain per trail and merges trails by complete-linkage
/// agglomeration until `l` groups remain. Each group's chain is estimated
/// from its pooled counts.
pub fn very_long_assignment(trails: &[DiscreteTrail], n: usize, l: usize) -> Result<VeryLongFit> {
    require_nonempty(trails)?;
    check_states(trails, n)?;
    let r = trails.len();
    if l == 0 || r < l {
        return Err(Error::InvalidArgument(format!("need at least L={l} trails, got {r}")));
    }
    let per_trail: Vec<TrailChain> = trails.par_iter().map(|t| per_trail_chain(t, n)).collect::<Result<_>>()?;
    let visited: Vec<Vec<bool>> = per_trail
        .iter()
        .map(|tc| {
            let mut v = vec![true; n];
            for &y in &tc.unvisited {
                v[y] = false;
            }
            v
        })
        .collect();
    let mut dist = DMatrix::<f64>::zeros(r, r);
    let rows: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|i| (0..r).map(|j| chain_distance(&per_trail[i], &per_trail[j], &visited[i], &visited[j])).collect())
        .collect();
    for i in 0..r {
        for j in 0..r {
            dist[(i, j)] = rows[i][j];
        }
    }
    let mut members: Vec<Option<Vec<usize>>> = (0..r).map(|i| Some(vec![i])).collect();
    let mut alive = r;
    while alive > l {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..r {
            if members[i].is_none() {
                continue;
            }
            for j in (i + 1)..r {
                if members[j].is_some() && dist[(i, j)] < best.0 {
                    best = (dist[(i, j)], i, j);
                }
            }
        }
        let (_, i, j) = best;
        for k in 0..r {
            let d = dist[(i, k)].max(dist[(j, k)]);
            dist[(i, k)] = d;
            dist[(k, i)] = d;
        }
        let mut moved = members[j].take().unwrap_or_default();
        if let Some(m) = members[i].as_mut() {
            m.append(&mut moved);
        }
        alive -= 1;
    }
    let mut groups: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    for g in groups.iter_mut() {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    let mut labels = vec![0; r];
    for (c, g) in groups.iter().enumerate() {
        for &x in g {
            labels[x] = c;
        }
    }
    let tau = trails[0].tau();
    let mut chains = Vec::with_capacity(l);
    let mut start = DMatrix::zeros(l, n);
    for (c, g) in groups.iter().enumerate() {
        let mut counts = WeightedCounts::zeros(n);
        for &x in g {
            counts.add_trail(&trails[x], 1.0);
            start[(c, trails[x].first())] += 1.0 / r as f64;
        }
        chains.push(normalize_counts(counts.matrix(), tau)?.chain);
    }
    Ok(VeryLongFit {
        mixture: DtMixture::new(chains, start)?,
        assignment: SoftAssignment::hard(&labels, l)?,
        per_trail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_trail_estimate() {
        let t = DiscreteTrail::new(vec![0, 0, 1, 0, 1], 1.0).unwrap();
        let tc = per_trail_chain(&t, 3).unwrap();
        assert!((tc.chain.prob(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((tc.chain.prob(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tc.chain.prob(1, 0), 1.0);
        assert_eq!(tc.unvisited, vec![2]);
        assert!((tc.chain.prob(2, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn groups_by_dynamics() {
        let sticky = |s: usize| DiscreteTrail::new((0..40).map(|k| (k / 20 + s) % 2).collect(), 1.0).unwrap();
        let flip = |s: usize| DiscreteTrail::new((0..40).map(|k| (k + s) % 2).collect(), 1.0).unwrap();
        let trails = vec![sticky(0), flip(0), sticky(1), flip(1), flip(0)];
        let fit = very_long_assignment(&trails, 2, 2).unwrap();
        assert_eq!(fit.assignment.labels(), vec![0, 1, 0, 1, 1]);
        assert_eq!(fit.mixture.chain(1).prob(0, 1), 1.0);
        assert!((fit.mixture.start().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_states_are_far_apart() {
        let trails =
            vec![DiscreteTrail::new(vec![0, 0, 0], 1.0).unwrap(), DiscreteTrail::new(vec![1, 1, 1], 1.0).unwrap()];
        let fit = very_long_assignment(&trails, 2, 2).unwrap();
        assert_eq!(fit.assignment.labels(), vec![0, 1]);
    }
}
