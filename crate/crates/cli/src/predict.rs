use std::fmt::Write as _;
use std::path::Path;

use ctmcmix::recover::{AbsorptionModel, Prefix};
use ctmcmix::simulate::{discretize, max_observations};
use ctmcmix::CtMixture;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::io::{json_pretty, read_mixture, read_trails, write_text, NamedTrail};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub hit: usize,
    pub miss: usize,
    /// Observe only this initial time span of every trail.
    pub prefix_span: Option<f64>,
    /// Observe the prefix at this interval instead of continuously.
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub p_hit: f64,
    /// Whether the full trail ended in `hit`, when it ended in hit or miss.
    pub outcome: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSummary {
    pub predictions: Vec<Prediction>,
    pub evaluated: usize,
    /// Fraction of evaluated trails where `p_hit >= 0.5` matches the outcome.
    pub accuracy: Option<f64>,
    pub log_loss: Option<f64>,
}

pub fn run_predict(m: &CtMixture, trails: &[NamedTrail], opts: &PredictOptions) -> Result<PredictSummary> {
    if let Some(s) = opts.prefix_span {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(CliError::config("prefix-span", "must be nonnegative"));
        }
    }
    if let Some(t) = opts.tau {
        if !(t > 0.0) || !t.is_finite() {
            return Err(CliError::config("tau", "must be positive"));
        }
    }
    let model = AbsorptionModel::new(m, opts.hit, opts.miss)?;
    let mut predictions = Vec::with_capacity(trails.len());
    for nt in trails {
        let full = &nt.trail;
        let last = full.final_state();
        let outcome = (last == opts.hit || last == opts.miss).then_some(last == opts.hit);
        let prefix = match opts.prefix_span {
            Some(s) => full.truncated(s),
            None => full.clone(),
        };
        let p_hit = match opts.tau {
            Some(tau) => {
                let d = discretize(&prefix, tau, max_observations(&prefix, tau))?;
                model.predict(Prefix::Discrete(&d))?
            }
            None => model.predict(Prefix::Continuous(&prefix))?,
        };
        predictions.push(Prediction { id: nt.id.clone(), p_hit, outcome });
    }
    let scored: Vec<(f64, bool)> = predictions.iter().filter_map(|p| p.outcome.map(|o| (p.p_hit, o))).collect();
    let evaluated = scored.len();
    let (accuracy, log_loss) = if evaluated == 0 {
        (None, None)
    } else {
        let correct = scored.iter().filter(|(p, o)| (*p >= 0.5) == *o).count();
        let loss: f64 = scored
            .iter()
            .map(|(p, o)| {
                let p = p.clamp(1e-15, 1.0 - 1e-15);
                if *o {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        (Some(correct as f64 / evaluated as f64), Some(loss / evaluated as f64))
    };
    Ok(PredictSummary { predictions, evaluated, accuracy, log_loss })
}

pub fn predictions_csv(p: &[Prediction]) -> String {
    let mut s = String::from("trail_id,p_hit,outcome\n");
    for x in p {
        let outcome = match x.outcome {
            Some(true) => "hit",
            Some(false) => "miss",
            None => "",
        };
        let _ = writeln!(s, "{},{},{}", x.id, x.p_hit, outcome);
    }
    s
}

/// Writes `predictions.csv` and `metrics.json` into `out`.
pub fn cmd_predict(mixture: &Path, prefixes: &Path, opts: &PredictOptions, out: &Path) -> Result<PredictSummary> {
    let (m, _) = read_mixture(mixture)?;
    let trails = read_trails(prefixes)?;
    let summary = run_predict(&m, &trails, opts)?;
    write_text(&out.join("predictions.csv"), &predictions_csv(&summary.predictions))?;
    let metrics = json!({
        "trails": summary.predictions.len(),
        "evaluated": summary.evaluated,
        "accuracy": summary.accuracy,
        "log_loss": summary.log_loss,
    });
    write_text(&out.join("metrics.json"), &json_pretty(&metrics))?;
    Ok(summary)
}
