use std::path::Path;

use ctmcmix::simulate::{
    proportional_mixture, random_mixture, random_rate_matrix, sample_trails, stream_rng, GeneratorConfig,
};
use ctmcmix::CtMixture;

use crate::error::{CliError, Result};
use crate::io::{write_mixture, write_trails, NamedTrail};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub n: usize,
    pub l: usize,
    pub rate_upper: f64,
    pub seed: u64,
    pub r: usize,
    pub horizon: f64,
    pub absorbing: Vec<usize>,
    /// Two chains `K` and `f K` instead of independent random chains.
    pub factor: Option<f64>,
    pub tau_hint: Option<f64>,
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(CliError::config("n", "needs at least 2 states"));
        }
        if self.l == 0 {
            return Err(CliError::config("L", "needs at least one chain"));
        }
        if !(self.rate_upper > 0.0) || !self.rate_upper.is_finite() {
            return Err(CliError::config("rate-upper", format!("must be positive, got {}", self.rate_upper)));
        }
        if self.r == 0 {
            return Err(CliError::config("r", "must be at least 1"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(CliError::config("horizon", format!("must be positive, got {}", self.horizon)));
        }
        if let Some(&s) = self.absorbing.iter().find(|&&s| s >= self.n) {
            return Err(CliError::config("absorbing", format!("state {s} out of range for n={}", self.n)));
        }
        if self.absorbing.len() >= self.n {
            return Err(CliError::config("absorbing", "at least one state must be transient"));
        }
        if let Some(f) = self.factor {
            if !(f > 0.0) || !f.is_finite() {
                return Err(CliError::config("factor", format!("must be positive, got {f}")));
            }
            if self.l != 2 {
                return Err(CliError::config("factor", "proportional mixtures have L=2"));
            }
        }
        if let Some(t) = self.tau_hint {
            if !(t > 0.0) || !t.is_finite() {
                return Err(CliError::config("tau-hint", format!("must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

pub fn generate_mixture(cfg: &GenerateConfig) -> Result<CtMixture> {
    cfg.validate()?;
    Ok(match cfg.factor {
        Some(f) => {
            let k = random_rate_matrix(cfg.n, cfg.rate_upper, &cfg.absorbing, &mut stream_rng(cfg.seed, 0))?;
            proportional_mixture(&k, f)?
        }
        None => random_mixture(&GeneratorConfig {
            n: cfg.n,
            l: cfg.l,
            rate_upper: cfg.rate_upper,
            seed: cfg.seed,
            absorbing: cfg.absorbing.clone(),
        })?,
    })
}

/// Draws a mixture and `r` trails from it. Trails are sampled from a seed
/// stream separate from the mixture's.
pub fn generate(cfg: &GenerateConfig) -> Result<(CtMixture, Vec<NamedTrail>)> {
    let m = generate_mixture(cfg)?;
    let trails = sample_trails(&m, cfg.r, cfg.horizon, cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    let named = trails.into_iter().enumerate().map(|(i, trail)| NamedTrail { id: i.to_string(), trail }).collect();
    Ok((m, named))
}

pub fn cmd_generate(cfg: &GenerateConfig, mixture_out: &Path, trails_out: &Path) -> Result<()> {
    let (m, trails) = generate(cfg)?;
    write_mixture(mixture_out, &m, cfg.tau_hint)?;
    write_trails(trails_out, &trails)
}
