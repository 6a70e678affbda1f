use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, Result};
use crate::fit::{cmd_fit, FitOptions, InitChoice, Method};
use crate::generate::{cmd_generate, GenerateConfig};
use crate::ingest::{cmd_ingest, IngestConfig};
use crate::predict::{cmd_predict, PredictOptions};
use crate::sweep::{cmd_sweep, Axis, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "ctmcmix", version, about = "Learn mixtures of continuous-time Markov chains from trails")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a random mixture and trails from it.
    Generate(GenerateArgs),
    /// Learn a mixture from a trail file.
    Fit(FitArgs),
    /// Run a synthetic experiment over one parameter axis.
    Sweep(SweepArgs),
    /// Convert a CSV event log into trails.
    Ingest(IngestArgs),
    /// Predict hit/miss absorption for trail prefixes.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long = "L", default_value_t = 1)]
    pub l: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rate_upper: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub r: usize,
    #[arg(long)]
    pub horizon: f64,
    /// Comma-separated absorbing states.
    #[arg(long, value_delimiter = ',')]
    pub absorbing: Vec<usize>,
    /// Generate chains K and f*K (requires L=2).
    #[arg(long)]
    pub factor: Option<f64>,
    #[arg(long)]
    pub tau_hint: Option<f64>,
    /// Directory receiving mixture.json and trails.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub trails: PathBuf,
    #[arg(long)]
    pub tau: f64,
    /// Observations per trail; all that fit in the trail when omitted.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "L")]
    pub l: usize,
    #[arg(long, value_enum, default_value_t = Method::Dem)]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Mixture file used for recovery and clustering errors.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Split discretized trails into pieces of this many observations.
    #[arg(long)]
    pub segment_length: Option<usize>,
    /// Number of states; inferred from the trails when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitChoice>,
    #[arg(long, default_value_t = 1.0)]
    pub factor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "dem")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long = "L", default_value_t = 2)]
    pub l: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rate_upper: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub r: usize,
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Keep r*m fixed at this value (axis m or r).
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitChoice>,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub events: PathBuf,
    /// Gap in seconds that starts a new trail.
    #[arg(long, default_value_t = 900.0)]
    pub gap: f64,
    #[arg(long)]
    pub top_k: usize,
    #[arg(long)]
    pub min_duration: Option<f64>,
    #[arg(long)]
    pub max_duration: Option<f64>,
    /// Tokens that end a trail (repeatable).
    #[arg(long = "absorbing-token")]
    pub absorbing_tokens: Vec<String>,
    /// Directory receiving trails.jsonl and states.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub mixture: PathBuf,
    #[arg(long)]
    pub prefixes: PathBuf,
    #[arg(long)]
    pub hit: usize,
    #[arg(long)]
    pub miss: usize,
    /// Use only the first this-many seconds of every trail.
    #[arg(long)]
    pub prefix_span: Option<f64>,
    /// Observe prefixes at this interval instead of continuously.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Directory receiving predictions.csv and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Applies `CTMCMIX_THREADS` to the global thread pool, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CTMCMIX_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::config("CTMCMIX_THREADS", format!("expected a positive integer, got {raw:?}")))?;
    // A second initialization in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate(a) => {
            let cfg = GenerateConfig {
                n: a.n,
                l: a.l,
                rate_upper: a.rate_upper,
                seed: a.seed,
                r: a.r,
                horizon: a.horizon,
                absorbing: a.absorbing,
                factor: a.factor,
                tau_hint: a.tau_hint,
            };
            cmd_generate(&cfg, &a.out.join("mixture.json"), &a.out.join("trails.jsonl"))
        }
        Command::Fit(a) => {
            let opts = FitOptions {
                tau: a.tau,
                m: a.m,
                l: a.l,
                method: a.method,
                seed: a.seed,
                restarts: a.restarts,
                max_iter: a.max_iter,
                segment_length: a.segment_length,
                n: a.n,
                init: a.init,
                factor: a.factor,
            };
            cmd_fit(&a.trails, a.truth.as_deref(), &opts, &a.out).map(|_| ())
        }
        Command::Sweep(a) => {
            let mut cfg = ExperimentConfig::new(a.axis, a.values, a.methods);
            cfg.n = a.n;
            cfg.l = a.l;
            cfg.rate_upper = a.rate_upper;
            cfg.seed = a.seed;
            cfg.r = a.r;
            cfg.m = a.m;
            cfg.tau = a.tau;
            cfg.horizon = a.horizon;
            cfg.repeats = a.repeats;
            cfg.budget = a.budget;
            cfg.init = a.init;
            cfg.restarts = a.restarts;
            cfg.max_iter = a.max_iter;
            cmd_sweep(&cfg, &a.out).map(|_| ())
        }
        Command::Ingest(a) => {
            let cfg = IngestConfig {
                gap: a.gap,
                top_k: a.top_k,
                min_duration: a.min_duration,
                max_duration: a.max_duration,
                absorbing_tokens: a.absorbing_tokens,
            };
            let data = cmd_ingest(&a.events, &cfg, &a.out.join("trails.jsonl"), &a.out.join("states.json"))?;
            eprintln!("{} trails over {} states", data.trails.len(), data.states.len());
            Ok(())
        }
        Command::Predict(a) => {
            let opts = PredictOptions { hit: a.hit, miss: a.miss, prefix_span: a.prefix_span, tau: a.tau };
            let s = cmd_predict(&a.mixture, &a.prefixes, &opts, &a.out)?;
            if let (Some(acc), Some(ll)) = (s.accuracy, s.log_loss) {
                println!("accuracy {acc:.4} log_loss {ll:.4} over {} trails", s.evaluated);
            }
            Ok(())
        }
    }
}
