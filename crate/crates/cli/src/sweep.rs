use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use ctmcmix::metrics::{clustering_error, recovery_error};
use ctmcmix::simulate::{
    proportional_mixture, random_mixture, random_rate_matrix, sample_trails, stream_rng, GeneratorConfig,
};
use ctmcmix::{CtMixture, SoftAssignment};
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::fit::{run_fit, FitOptions, InitChoice, Method};
use crate::io::{write_text, NamedTrail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    M,
    R,
    Tau,
    #[value(name = "L")]
    L,
    F,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::M => "m",
            Axis::R => "r",
            Axis::Tau => "tau",
            Axis::L => "L",
            Axis::F => "f",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub l: usize,
    pub rate_upper: f64,
    pub seed: u64,
    pub r: usize,
    pub m: usize,
    pub tau: f64,
    /// Trail length in time; defaults to `m * tau`.
    pub horizon: Option<f64>,
    pub methods: Vec<Method>,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub repeats: usize,
    /// Fixed `r * m`: the axis sets one of them and the other follows.
    pub budget: Option<usize>,
    pub init: Option<InitChoice>,
    pub restarts: usize,
    pub max_iter: usize,
}

impl ExperimentConfig {
    pub fn new(axis: Axis, values: Vec<f64>, methods: Vec<Method>) -> Self {
        Self {
            n: 10,
            l: 2,
            rate_upper: 1.0,
            seed: 0,
            r: 100,
            m: 200,
            tau: 0.1,
            horizon: None,
            methods,
            axis,
            values,
            repeats: 1,
            budget: None,
            init: None,
            restarts: 3,
            max_iter: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(CliError::config("values", "at least one value is required"));
        }
        if let Some(v) = self.values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(CliError::config("values", format!("sweep values must be positive, got {v}")));
        }
        if matches!(self.axis, Axis::M | Axis::R | Axis::L) {
            if let Some(v) = self.values.iter().find(|v| v.fract() != 0.0) {
                return Err(CliError::config("values", format!("axis {} needs integers, got {v}", self.axis.name())));
            }
        }
        if self.repeats == 0 {
            return Err(CliError::config("repeats", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(CliError::config("methods", "at least one method is required"));
        }
        if self.budget.is_some() && !matches!(self.axis, Axis::M | Axis::R) {
            return Err(CliError::config("budget", "a fixed budget needs axis m or r"));
        }
        if self.axis == Axis::F && self.l != 2 {
            return Err(CliError::config("L", "the proportional-rates axis uses L=2"));
        }
        if self.n < 2 || self.l == 0 || self.r == 0 || self.m == 0 {
            return Err(CliError::config("n", "n >= 2, L >= 1, r >= 1 and m >= 1 are required"));
        }
        if !(self.tau > 0.0) || !(self.rate_upper > 0.0) {
            return Err(CliError::config("tau", "tau and rate-upper must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub method: Method,
    pub recovery_error: f64,
    pub clustering_error: f64,
    pub loglik: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    l: usize,
    r: usize,
    m: usize,
    tau: f64,
    f: Option<f64>,
}

fn cell_for(cfg: &ExperimentConfig, value: f64) -> Cell {
    let mut c = Cell { n: cfg.n, l: cfg.l, r: cfg.r, m: cfg.m, tau: cfg.tau, f: None };
    match cfg.axis {
        Axis::M => {
            c.m = value as usize;
            if let Some(b) = cfg.budget {
                c.r = (b / c.m).max(1);
            }
        }
        Axis::R => {
            c.r = value as usize;
            if let Some(b) = cfg.budget {
                c.m = (b / c.r).max(1);
            }
        }
        Axis::Tau => c.tau = value,
        Axis::L => c.l = value as usize,
        Axis::F => c.f = Some(value),
    }
    c
}

fn instance(cfg: &ExperimentConfig, cell: &Cell, seed: u64) -> Result<CtMixture> {
    Ok(match cell.f {
        Some(f) => {
            let k = random_rate_matrix(cell.n, cfg.rate_upper, &[], &mut stream_rng(seed, 0))?;
            proportional_mixture(&k, f)?
        }
        None => random_mixture(&GeneratorConfig::new(cell.n, cell.l, seed).with_rate_upper(cfg.rate_upper))?,
    })
}

fn run_cell(cfg: &ExperimentConfig, vi: usize, rep: usize, method: Method) -> Result<SweepRow> {
    let value = cfg.values[vi];
    let cell = cell_for(cfg, value);
    let seed = cfg.seed.wrapping_add(rep as u64);
    let truth = instance(cfg, &cell, seed)?;
    let horizon = cfg.horizon.unwrap_or(cell.m as f64 * cell.tau);
    let data_seed = seed.wrapping_mul(1_000_003).wrapping_add(vi as u64 + 1);
    let trails: Vec<NamedTrail> = sample_trails(&truth, cell.r, horizon, data_seed)?
        .into_iter()
        .enumerate()
        .map(|(i, trail)| NamedTrail { id: i.to_string(), trail })
        .collect();
    let opts = FitOptions {
        tau: cell.tau,
        m: Some(cell.m),
        l: cell.l,
        method,
        seed,
        restarts: cfg.restarts,
        max_iter: cfg.max_iter,
        segment_length: None,
        n: Some(cell.n),
        init: cfg.init,
        factor: cell.f.unwrap_or(1.0),
    };
    let fit = run_fit(&trails, &opts, Some(&truth))?;
    let labels: Vec<usize> = trails.iter().map(|t| t.trail.true_chain.unwrap_or(0)).collect();
    let gt = SoftAssignment::hard(&labels, cell.l)?;
    Ok(SweepRow {
        value,
        repeat: rep,
        seed,
        method,
        recovery_error: recovery_error(&truth, &fit.mixture)?,
        clustering_error: clustering_error(&fit.assignment, &gt)?,
        loglik: fit.log_likelihood,
        seconds: fit.seconds,
    })
}

/// One row per (value, repeat, method), ordered by value index, repeat and
/// method order. Failed cells are reported on stderr and keep NaN metrics.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize, Method)> = (0..cfg.values.len())
        .flat_map(|vi| (0..cfg.repeats).flat_map(move |rep| cfg.methods.iter().map(move |&m| (vi, rep, m))))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(vi, rep, method)| {
            run_cell(cfg, vi, rep, method).unwrap_or_else(|e| {
                eprintln!("warning: {}={} repeat {rep} {}: {e}", cfg.axis.name(), cfg.values[vi], method.name());
                SweepRow {
                    value: cfg.values[vi],
                    repeat: rep,
                    seed: cfg.seed.wrapping_add(rep as u64),
                    method,
                    recovery_error: f64::NAN,
                    clustering_error: f64::NAN,
                    loglik: f64::NAN,
                    seconds: f64::NAN,
                }
            })
        })
        .collect())
}

pub fn sweep_csv(axis: Axis, rows: &[SweepRow]) -> String {
    let mut s = String::from("axis,value,repeat,seed,method,recovery_error,clustering_error,loglik,seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            axis.name(),
            r.value,
            r.repeat,
            r.seed,
            r.method.name(),
            r.recovery_error,
            r.clustering_error,
            r.loglik,
            r.seconds
        );
    }
    s
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg)?;
    write_text(out, &sweep_csv(cfg.axis, &rows))?;
    Ok(rows)
}
