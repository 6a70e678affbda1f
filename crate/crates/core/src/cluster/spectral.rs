use nalgebra::{DMatrix, SVD};
use rand::Rng;

use super::require_nonempty;
use crate::error::{Error, Result};
use crate::simulate::stream_rng;
use crate::types::{check_states, DiscreteTrail, SoftAssignment};

/// Per-trail feature vector used for spectral clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feature {
    /// Row-normalized transition frequencies, flattened (`n * n` entries).
    #[default]
    TransitionFrequencies,
    /// Fraction of observations in each state (`n` entries).
    StateFrequencies,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub l: usize,
    pub feature: Feature,
    pub kmeans_restarts: usize,
    pub seed: u64,
    /// Separation parameter of the model class, reported back for reference.
    pub delta: Option<f64>,
    /// Minimum mixing weight of the model class, reported back for reference.
    pub alpha: Option<f64>,
}

impl SpectralConfig {
    pub fn new(l: usize, seed: u64) -> Self {
        Self { l, feature: Feature::default(), kmeans_restarts: 10, seed, delta: None, alpha: None }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralFit {
    pub assignment: SoftAssignment,
    /// Leading singular values of the feature matrix, descending.
    pub singular_values: Vec<f64>,
    /// All trails had identical features, so one cluster was returned.
    pub single_cluster: bool,
    pub inertia: f64,
}

/// Feature matrix with one row per trail.
pub fn trail_features(trails: &[DiscreteTrail], n: usize, feature: Feature) -> DMatrix<f64> {
    match feature {
        Feature::StateFrequencies => {
            let mut f = DMatrix::zeros(trails.len(), n);
            for (x, t) in trails.iter().enumerate() {
                let w = 1.0 / t.len() as f64;
                for &s in t.states() {
                    f[(x, s)] += w;
                }
            }
            f
        }
        Feature::TransitionFrequencies => {
            let mut f = DMatrix::zeros(trails.len(), n * n);
            let mut row_tot = vec![0.0; n];
            for (x, t) in trails.iter().enumerate() {
                row_tot.iter_mut().for_each(|v| *v = 0.0);
                for (y, z) in t.transitions() {
                    f[(x, y * n + z)] += 1.0;
                    row_tot[y] += 1.0;
                }
                for y in 0..n {
                    if row_tot[y] > 0.0 {
                        for z in 0..n {
                            f[(x, y * n + z)] /= row_tot[y];
                        }
                    }
                }
            }
            f
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k).min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b]))).unwrap_or(0);
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            sizes[c] += 1;
            for d in 0..dim {
                sums[c][d] += p[d];
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                // Move an empty center to the point farthest from its own center.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]]).total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    })
                    .unwrap_or(0);
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|v| v / sizes[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &c)| sq_dist(p, &centers[c])).sum();
    (labels, inertia)
}

/// k-means with k-means++ seeding; returns the labels and inertia of the
/// best of `restarts` runs. Labels are renumbered by first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<(Vec<usize>, f64)> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {} points", points.len())));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for run in 0..restarts.max(1) {
        let mut rng = stream_rng(seed, run as u64);
        let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
        let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let idx = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = points.len() - 1;
                for (i, &w) in d2.iter().enumerate() {
                    if u < w {
                        pick = i;
                        break;
                    }
                    u -= w;
                }
                pick
            } else {
                rng.random_range(0..points.len())
            };
            centers.push(points[idx].clone());
            for (i, p) in points.iter().enumerate() {
                d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
            }
        }
        let (labels, inertia) = lloyd(points, centers);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    let (labels, inertia) = best.ok_or(Error::NothingEstimated)?;
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    let relabeled = labels
        .iter()
        .map(|&c| {
            if map[c] == usize::MAX {
                map[c] = next;
                next += 1;
            }
            map[c]
        })
        .collect();
    Ok((relabeled, inertia))
}

/// Projects per-trail features onto their top-`L` right singular vectors and
/// clusters the projections with k-means. The result is a hard assignment.
pub fn spectral_cluster(trails: &[DiscreteTrail], n: usize, cfg: &SpectralConfig) -> Result<SpectralFit> {
    require_nonempty(trails)?;
    check_states(trails, n)?;
    if cfg.l == 0 || trails.len() < cfg.l {
        return Err(Error::InvalidArgument(format!("need at least L={} trails, got {}", cfg.l, trails.len())));
    }
    let f = trail_features(trails, n, cfg.feature);
    let r = trails.len();
    let spread = (1..r).map(|x| (f.row(x) - f.row(0)).abs().max()).fold(0.0, f64::max);
    if spread < 1e-12 || cfg.l == 1 {
        return Ok(SpectralFit {
            assignment: SoftAssignment::hard(&vec![0; r], cfg.l)?,
            singular_values: Vec::new(),
            single_cluster: spread < 1e-12,
            inertia: 0.0,
        });
    }
    let svd = SVD::new(f.clone(), false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep: Vec<usize> = order.into_iter().take(cfg.l).collect();
    let points: Vec<Vec<f64>> = (0..r).map(|x| keep.iter().map(|&k| f.row(x).dot(&v_t.row(k))).collect()).collect();
    let (labels, inertia) = kmeans(&points, cfg.l, cfg.kmeans_restarts, cfg.seed)?;
    Ok(SpectralFit {
        assignment: SoftAssignment::hard(&labels, cfg.l)?,
        singular_values: keep.iter().map(|&k| svd.singular_values[k]).collect(),
        single_cluster: false,
        inertia,
    })
}
