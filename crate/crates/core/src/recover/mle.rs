use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{estimate_from_counts, EstimatorConfig};
use crate::linalg::{expm, expm_frechet, logm};
use crate::simulate::stream_rng;
use crate::types::{RateMatrix, WeightedCounts};

/// Starting point for the optimizer.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum MleInit {
    /// Matrix logarithm of the row-normalized counts when that is a valid
    /// generator; otherwise the closed-form estimator, otherwise random.
    #[default]
    MatrixLog,
    /// Closed-form estimator, falling back to random rates.
    FromEstimators,
    Random,
    Given(RateMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub max_iter: usize,
    /// Stop once the largest log-rate gradient entry of the per-count
    /// objective falls below this.
    pub grad_tol: f64,
    /// Lower bound of every off-diagonal rate; `None` means `1e-8 / tau`.
    pub rate_floor: Option<f64>,
    pub init: MleInit,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-9, rate_floor: None, init: MleInit::default(), seed: 0 }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be positive".into()));
        }
        if let Some(f) = self.rate_floor {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::InvalidArgument(format!("rate_floor must be positive, got {f}")));
            }
        }
        Ok(())
    }

    pub fn floor_for(&self, tau: f64) -> f64 {
        self.rate_floor.unwrap_or(1e-8 / tau)
    }
}

/// Which initialization was actually used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitUsed {
    MatrixLog,
    FromEstimators,
    Random,
    Given,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub rate: RateMatrix,
    /// `sum_yz C_yz ln exp(K tau)_yz` at the returned rates.
    pub log_likelihood: f64,
    /// Per-count objective after initialization and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub init: InitUsed,
}

/// `f(theta) = (1 / W) sum_yz C_yz ln exp(K(theta) tau)_yz` with
/// `K_yz = floor + exp(theta_yz)` off the diagonal, `W` the total count.
///
/// `theta` lists the off-diagonal entries row by row, skipping rows whose
/// counts are negligible next to `W`; those rows are zero.
#[derive(Debug, Clone)]
pub struct MleObjective {
    c: DMatrix<f64>,
    free: Vec<(usize, usize)>,
    tau: f64,
    floor: f64,
    scale: f64,
}

impl MleObjective {
    pub fn new(c: &WeightedCounts, tau: f64, floor: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let total = c.total();
        if !(total > 0.0) {
            return Err(Error::NothingEstimated);
        }
        let n = c.n();
        let mut cm = c.matrix().clone();
        let mut free = Vec::new();
        for y in 0..n {
            if cm.row(y).sum() > f64::EPSILON * total {
                free.extend((0..n).filter(|&z| z != y).map(|z| (y, z)));
            } else {
                cm.row_mut(y).fill(0.0);
            }
        }
        Ok(Self { c: cm, free, tau, floor, scale: 1.0 / total })
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.free.iter().copied()
    }

    pub fn generator(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let mut k = DMatrix::zeros(n, n);
        for ((y, z), t) in self.pairs().zip(theta.iter()) {
            k[(y, z)] = self.floor + t.exp();
        }
        for y in 0..n {
            let s: f64 = k.row(y).sum();
            k[(y, y)] = -s;
        }
        k
    }

    pub fn rate_matrix(&self, theta: &DVector<f64>) -> Result<RateMatrix> {
        RateMatrix::new(self.generator(theta))
    }

    /// Log-rates of `k`, with rates at or below the floor mapped just above it.
    pub fn theta_of(&self, k: &DMatrix<f64>) -> DVector<f64> {
        let vals: Vec<f64> = self.pairs().map(|(y, z)| (k[(y, z)] - self.floor).max(self.floor).ln()).collect();
        DVector::from_vec(vals)
    }

    fn value_from_t(&self, t: &DMatrix<f64>) -> f64 {
        let mut f = 0.0;
        for (c, p) in self.c.iter().zip(t.iter()) {
            if *c > 0.0 {
                if *p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                f += c * p.ln();
            }
        }
        f * self.scale
    }

    pub fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        let t = expm(&(self.generator(theta) * self.tau))?;
        Ok(self.value_from_t(&t))
    }

    /// Objective and its gradient in `theta`.
    pub fn value_and_gradient(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let k = self.generator(theta);
        let a = &k * self.tau;
        let t = expm(&a)?;
        let f = self.value_from_t(&t);
        if !f.is_finite() {
            return Ok((f, DVector::zeros(self.dim())));
        }
        let g = DMatrix::from_fn(self.n(), self.n(), |y, z| {
            let c = self.c[(y, z)];
            if c > 0.0 {
                self.scale * c / t[(y, z)]
            } else {
                0.0
            }
        });
        let (_, l) = expm_frechet(&a.transpose(), &g)?;
        let gamma = l * self.tau;
        let grad: Vec<f64> =
            self.pairs().zip(theta.iter()).map(|((y, z), th)| th.exp() * (gamma[(y, z)] - gamma[(y, y)])).collect();
        let grad = DVector::from_vec(grad);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("likelihood gradient".into()));
        }
        Ok((f, grad))
    }

    pub fn log_likelihood(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(self.value(theta)? / self.scale)
    }
}

fn row_normalized(c: &WeightedCounts) -> DMatrix<f64> {
    let n = c.n();
    let mut t = DMatrix::identity(n, n);
    for y in 0..n {
        let s = c.row_total(y);
        if s > 0.0 {
            for z in 0..n {
                t[(y, z)] = c.get(y, z) / s;
            }
        }
    }
    t
}

fn log_init(c: &WeightedCounts, tau: f64, floor: f64) -> Option<DMatrix<f64>> {
    let l = logm(&row_normalized(c)).ok()? / tau;
    let n = c.n();
    let tol = 1e-9 / tau;
    for y in 0..n {
        for z in 0..n {
            if y != z && (l[(y, z)] < -tol || !l[(y, z)].is_finite()) {
                return None;
            }
        }
    }
    Some(l.map(|v| v.max(floor)))
}

fn estimator_init(c: &WeightedCounts, tau: f64) -> Option<DMatrix<f64>> {
    let cfg = EstimatorConfig { min_count: 1.0, ..EstimatorConfig::default() };
    let est = estimate_from_counts(c, tau, &cfg).ok()?;
    let est_rows = est.estimated_states();
    let k = est.rate.into_matrix();
    let n = k.nrows();
    let positives: Vec<f64> = (0..n)
        .flat_map(|y| (0..n).filter(move |&z| z != y).map(move |z| (y, z)))
        .map(|(y, z)| k[(y, z)])
        .filter(|v| *v > 0.0)
        .collect();
    if positives.is_empty() {
        return None;
    }
    let mean = positives.iter().sum::<f64>() / positives.len() as f64;
    Some(DMatrix::from_fn(n, n, |y, z| {
        if y == z {
            0.0
        } else if est_rows.contains(&y) {
            k[(y, z)]
        } else {
            mean
        }
    }))
}

fn random_init(n: usize, tau: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 0x6d6c65);
    let upper = 1.0 / (tau * n as f64);
    DMatrix::from_fn(n, n, |y, z| if y == z { 0.0 } else { rng.random::<f64>() * upper })
}

fn initial_rates(c: &WeightedCounts, tau: f64, floor: f64, cfg: &MleConfig) -> Result<(DMatrix<f64>, InitUsed)> {
    let n = c.n();
    match &cfg.init {
        MleInit::Given(k) => {
            if k.n() != n {
                return Err(Error::Dimension(format!("initial rates have {} states, counts {n}", k.n())));
            }
            Ok((k.matrix().clone(), InitUsed::Given))
        }
        MleInit::Random => Ok((random_init(n, tau, cfg.seed), InitUsed::Random)),
        MleInit::MatrixLog => Ok(log_init(c, tau, floor)
            .map(|k| (k, InitUsed::MatrixLog))
            .or_else(|| estimator_init(c, tau).map(|k| (k, InitUsed::FromEstimators)))
            .unwrap_or_else(|| (random_init(n, tau, cfg.seed), InitUsed::Random))),
        MleInit::FromEstimators => Ok(estimator_init(c, tau)
            .map(|k| (k, InitUsed::FromEstimators))
            .unwrap_or_else(|| (random_init(n, tau, cfg.seed), InitUsed::Random))),
    }
}

const MAX_STEP: f64 = 8.0;
const ARMIJO: f64 = 1e-4;

/// Maximizes `sum_yz C_yz ln exp(K tau)_yz` over rate matrices whose
/// estimated off-diagonal entries are at least the rate floor. States with no counts
/// (relative to the total, below machine epsilon) get a zero row, since the
/// data says nothing about how they are left.
///
/// Quasi-Newton (BFGS) ascent on log-rates with backtracking line search;
/// the gradient is the adjoint Fréchet derivative of the matrix exponential.
pub fn mle_rate_matrix(c: &WeightedCounts, tau: f64, cfg: &MleConfig) -> Result<MleFit> {
    cfg.validate()?;
    let floor = cfg.floor_for(tau);
    let obj = MleObjective::new(c, tau, floor)?;
    let n = obj.n();
    if n == 1 {
        let rate = RateMatrix::new(DMatrix::zeros(1, 1))?;
        return Ok(MleFit {
            rate,
            log_likelihood: 0.0,
            trace: vec![0.0],
            iterations: 0,
            grad_norm: 0.0,
            converged: true,
            init: InitUsed::Given,
        });
    }
    let (k0, init) = initial_rates(c, tau, floor, cfg)?;
    let mut x = obj.theta_of(&k0);
    let (mut f, mut g) = obj.value_and_gradient(&x)?;
    if !f.is_finite() {
        let fallback = obj.theta_of(&random_init(n, tau, cfg.seed));
        let (f2, g2) = obj.value_and_gradient(&fallback)?;
        if !f2.is_finite() {
            return Err(Error::Numerical("likelihood is -inf at the initial rates".into()));
        }
        x = fallback;
        f = f2;
        g = g2;
    }
    let dim = obj.dim();
    let mut h = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut trace = vec![f];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if g.amax() <= cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut p = &h * &g;
        if p.dot(&g) <= 0.0 {
            h = DMatrix::identity(dim, dim);
            fresh = true;
            p = g.clone();
        }
        let big = p.amax();
        if big > MAX_STEP {
            p *= MAX_STEP / big;
        }
        let slope = p.dot(&g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * alpha;
            // Trial points where the exponential overflows are backtracked from.
            if let Ok((fn_, gn)) = obj.value_and_gradient(&xn) {
                if fn_.is_finite() && fn_ >= f + ARMIJO * alpha * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if fresh {
                break;
            }
            h = DMatrix::identity(dim, dim);
            fresh = true;
            continue;
        };
        // BFGS on the minimization of -f.
        let s = &xn - &x;
        let yv = &g - &gn;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                h *= sy / yv.dot(&yv);
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
    }
    Ok(MleFit {
        rate: obj.rate_matrix(&x)?,
        log_likelihood: f / obj.scale,
        trace,
        iterations,
        grad_norm: g.amax(),
        converged,
        init,
    })
}
