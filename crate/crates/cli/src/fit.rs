use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use ctmcmix::cluster::{posterior_soft_assignment, ClusterConfig, SpectralConfig};
use ctmcmix::metrics::{clustering_error, median_assignment_entropy, recovery_error};
use ctmcmix::recover::{em_continuous, fit_mixture, initial_mixture, CemConfig, FitMethod, InitStrategy, MleConfig};
use ctmcmix::simulate::discretize_all;
use ctmcmix::{CtMixture, DiscreteTrail, SoftAssignment};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::io::{assignment_csv, json_pretty, read_mixture, read_trails, write_mixture, write_text, NamedTrail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ValueEnum)]
pub enum Method {
    Dem,
    Ktt,
    Verylong,
    Cem,
    Groundtruth,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dem => "dem",
            Method::Ktt => "ktt",
            Method::Verylong => "verylong",
            Method::Cem => "cem",
            Method::Groundtruth => "groundtruth",
        }
    }
}

/// Starting mixture for discrete EM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitChoice {
    Good,
    Learned,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub tau: f64,
    pub m: Option<usize>,
    pub l: usize,
    pub method: Method,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub segment_length: Option<usize>,
    pub n: Option<usize>,
    pub init: Option<InitChoice>,
    /// Rate ratio assumed by the `good` initialization.
    pub factor: f64,
}

impl FitOptions {
    pub fn new(tau: f64, l: usize, method: Method) -> Self {
        Self {
            tau,
            m: None,
            l,
            method,
            seed: 0,
            restarts: 3,
            max_iter: 100,
            segment_length: None,
            n: None,
            init: None,
            factor: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(CliError::config("tau", format!("must be positive, got {}", self.tau)));
        }
        if self.l == 0 {
            return Err(CliError::config("L", "must be at least 1"));
        }
        if self.m == Some(0) {
            return Err(CliError::config("m", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(CliError::config("restarts", "must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(CliError::config("max-iter", "must be at least 1"));
        }
        if let Some(s) = self.segment_length {
            if s < 2 {
                return Err(CliError::config("segment-length", "must be at least 2"));
            }
            if self.method == Method::Cem {
                return Err(CliError::config("segment-length", "not available for cem"));
            }
        }
        if !(self.factor > 0.0) {
            return Err(CliError::config("factor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub mixture: CtMixture,
    /// One id per assignment row (segments get `id#k`).
    pub ids: Vec<String>,
    pub assignment: SoftAssignment,
    /// Ground-truth labels per row, when every row has one.
    pub labels: Option<Vec<usize>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub empty_chains: Vec<usize>,
    pub flagged_trails: usize,
    pub seconds: f64,
}

impl FitOutcome {
    /// Deterministic summary; wall time is kept out so reruns compare equal.
    pub fn metrics(&self, opts: &FitOptions, truth: Option<&CtMixture>) -> Result<Value> {
        let mut v = json!({
            "method": opts.method.name(),
            "L": opts.l,
            "n": self.mixture.n(),
            "tau": opts.tau,
            "m": opts.m,
            "r": self.ids.len(),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "empty_chains": self.empty_chains,
            "flagged_trails": self.flagged_trails,
            "median_assignment_entropy": median_assignment_entropy(&self.assignment),
        });
        if let Some(t) = truth {
            if t.l() == self.mixture.l() {
                v["recovery_error"] = json!(recovery_error(t, &self.mixture)?);
            }
            if let Some(labels) = &self.labels {
                if labels.iter().all(|&c| c < self.mixture.l()) {
                    let gt = SoftAssignment::hard(labels, self.mixture.l())?;
                    v["clustering_error"] = json!(clustering_error(&self.assignment, &gt)?);
                }
            }
        }
        Ok(v)
    }
}

fn resolve_n(trails: &[NamedTrail], opts: &FitOptions, truth: Option<&CtMixture>) -> Result<usize> {
    let seen = trails.iter().map(|t| t.trail.state_bound()).max().unwrap_or(0);
    let n = opts.n.or(truth.map(CtMixture::n)).unwrap_or(seen);
    if seen > n {
        return Err(CliError::config("n", format!("trails visit state {} but the model has {n} states", seen - 1)));
    }
    if n < 2 {
        return Err(CliError::config("n", "needs at least 2 states"));
    }
    Ok(n)
}

fn labels_of(labels: &[Option<usize>]) -> Option<Vec<usize>> {
    labels.iter().copied().collect()
}

/// Discretized rows with their ids and ground-truth labels.
/// Discretized trails with their ids and true chains.
type Rows = (Vec<DiscreteTrail>, Vec<String>, Vec<Option<usize>>);

fn discrete_rows(trails: &[NamedTrail], opts: &FitOptions) -> Result<Rows> {
    let cont: Vec<_> = trails.iter().map(|t| t.trail.clone()).collect();
    let disc = discretize_all(&cont, opts.tau, opts.m)?;
    let Some(len) = opts.segment_length else {
        let ids = trails.iter().map(|t| t.id.clone()).collect();
        let labels = trails.iter().map(|t| t.trail.true_chain).collect();
        return Ok((disc, ids, labels));
    };
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (nt, d) in trails.iter().zip(&disc) {
        for (k, seg) in d.segments(len).into_iter().enumerate() {
            rows.push(seg);
            ids.push(format!("{}#{k}", nt.id));
            labels.push(nt.trail.true_chain);
        }
    }
    if rows.is_empty() {
        return Err(CliError::config("segment-length", format!("no trail has {len} observations")));
    }
    Ok((rows, ids, labels))
}

/// Runs one fitting method on in-memory trails. Only `groundtruth` reads
/// the trails' `true_chain`.
pub fn run_fit(trails: &[NamedTrail], opts: &FitOptions, truth: Option<&CtMixture>) -> Result<FitOutcome> {
    opts.validate()?;
    if trails.is_empty() {
        return Err(CliError::config("trails", "no trails to fit"));
    }
    let n = resolve_n(trails, opts, truth)?;
    let started = Instant::now();
    if opts.method == Method::Cem {
        let span = opts.m.map(|m| m as f64 * opts.tau);
        let cont: Vec<_> = trails
            .iter()
            .map(|t| match span {
                Some(s) => t.trail.truncated(s),
                None => t.trail.clone(),
            })
            .collect();
        let cfg = CemConfig { l: opts.l, max_iter: opts.max_iter, tol: 1e-6, restarts: opts.restarts, seed: opts.seed };
        let fit = em_continuous(&cont, n, &cfg, None)?;
        let labels: Vec<Option<usize>> = trails.iter().map(|t| t.trail.true_chain).collect();
        let mass = fit.assignment.chain_mass();
        return Ok(FitOutcome {
            ids: trails.iter().map(|t| t.id.clone()).collect(),
            labels: labels_of(&labels),
            log_likelihood: fit.log_likelihood,
            iterations: fit.iterations,
            empty_chains: (0..opts.l).filter(|&c| mass[c] < 1e-6 * trails.len() as f64).collect(),
            flagged_trails: 0,
            mixture: fit.mixture,
            assignment: fit.assignment,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let (rows, ids, labels) = discrete_rows(trails, opts)?;
    let method = match opts.method {
        Method::Dem => {
            let cluster = ClusterConfig {
                max_iter: opts.max_iter,
                restarts: opts.restarts,
                ..ClusterConfig::new(opts.l, opts.seed)
            };
            let init = match opts.init {
                None => None,
                Some(choice) => {
                    let strategy = match choice {
                        InitChoice::Good => InitStrategy::Good { f: opts.factor },
                        InitChoice::Learned => InitStrategy::Learned,
                        InitChoice::Random => InitStrategy::Random,
                    };
                    Some(initial_mixture(strategy, &rows, n, opts.l, opts.seed)?)
                }
            };
            FitMethod::Dem { cluster, init }
        }
        Method::Ktt => FitMethod::Ktt(SpectralConfig::new(opts.l, opts.seed)),
        Method::Verylong => FitMethod::VeryLong,
        Method::Groundtruth => {
            let hard = labels_of(&labels)
                .ok_or_else(|| CliError::config("method", "groundtruth needs true_chain on every trail"))?;
            FitMethod::Assignment(SoftAssignment::hard(&hard, opts.l)?)
        }
        Method::Cem => unreachable!("handled above"),
    };
    let mle = MleConfig { seed: opts.seed, ..MleConfig::default() };
    let fit = fit_mixture(&rows, n, opts.l, &method, &mle)?;
    let post = posterior_soft_assignment(&rows, &fit.mixture.discretize(opts.tau)?)?;
    Ok(FitOutcome {
        ids,
        labels: labels_of(&labels),
        log_likelihood: post.log_likelihood,
        iterations: fit.cluster_iterations,
        empty_chains: fit.empty_chains,
        flagged_trails: fit.flagged_trails.len(),
        mixture: fit.mixture,
        assignment: fit.assignment,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Writes `mixture.json`, `assignment.csv`, `metrics.json` and `timing.json`
/// into `out`.
pub fn cmd_fit(trails_path: &Path, truth_path: Option<&Path>, opts: &FitOptions, out: &Path) -> Result<FitOutcome> {
    let trails = read_trails(trails_path)?;
    let truth = truth_path.map(read_mixture).transpose()?.map(|(m, _)| m);
    let outcome = run_fit(&trails, opts, truth.as_ref())?;
    write_mixture(&out.join("mixture.json"), &outcome.mixture, Some(opts.tau))?;
    write_text(&out.join("assignment.csv"), &assignment_csv(&outcome.ids, &outcome.assignment))?;
    write_text(&out.join("metrics.json"), &json_pretty(&outcome.metrics(opts, truth.as_ref())?))?;
    write_text(&out.join("timing.json"), &json_pretty(&json!({ "wall_seconds": outcome.seconds })))?;
    Ok(outcome)
}
