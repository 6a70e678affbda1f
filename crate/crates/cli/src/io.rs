//! File formats: mixture JSON, trail JSONL, assignment CSV and metrics JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ctmcmix::{ContinuousTrail, CtMixture, Event, RateMatrix, SoftAssignment};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFile {
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub tau_hint: Option<f64>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<Vec<f64>>>,
    pub start: Vec<Vec<f64>>,
}

impl MixtureFile {
    pub fn from_mixture(m: &CtMixture, tau_hint: Option<f64>) -> Self {
        let (l, n) = (m.l(), m.n());
        Self {
            n,
            l,
            tau_hint,
            k: m.chains().iter().map(|k| (0..n).map(|y| k.row(y)).collect()).collect(),
            start: (0..l).map(|c| (0..n).map(|y| m.start()[(c, y)]).collect()).collect(),
        }
    }

    pub fn to_mixture(&self, path: &Path) -> Result<CtMixture> {
        let bad = |message: String| CliError::Schema { path: path.to_path_buf(), message };
        if self.k.len() != self.l || self.start.len() != self.l {
            return Err(bad(format!(
                "L={} but {} rate matrices and {} start rows",
                self.l,
                self.k.len(),
                self.start.len()
            )));
        }
        let mut chains = Vec::with_capacity(self.l);
        for (c, rows) in self.k.iter().enumerate() {
            if rows.len() != self.n || rows.iter().any(|r| r.len() != self.n) {
                return Err(bad(format!("K[{c}] is not {n}x{n}", n = self.n)));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            chains.push(RateMatrix::new(DMatrix::from_row_slice(self.n, self.n, &flat))?);
        }
        if self.start.iter().any(|r| r.len() != self.n) {
            return Err(bad(format!("start rows must have {} entries", self.n)));
        }
        let flat: Vec<f64> = self.start.iter().flatten().copied().collect();
        Ok(CtMixture::new(chains, DMatrix::from_row_slice(self.l, self.n, &flat))?)
    }
}

pub fn read_mixture(path: &Path) -> Result<(CtMixture, Option<f64>)> {
    let text = read_text(path)?;
    let file: MixtureFile = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok((file.to_mixture(path)?, file.tau_hint))
}

pub fn mixture_json(m: &CtMixture, tau_hint: Option<f64>) -> String {
    let mut s = serde_json::to_string_pretty(&MixtureFile::from_mixture(m, tau_hint)).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_mixture(path: &Path, m: &CtMixture, tau_hint: Option<f64>) -> Result<()> {
    write_text(path, &mixture_json(m, tau_hint))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventRecord {
    t: f64,
    state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrailRecord {
    trail_id: String,
    true_chain: Option<usize>,
    events: Vec<EventRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    absorbed: bool,
}

/// A trail with its identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTrail {
    pub id: String,
    pub trail: ContinuousTrail,
}

pub fn parse_trails(text: &str, path: &Path) -> Result<Vec<NamedTrail>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| CliError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let rec: TrailRecord = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
        let events: Vec<Event> = rec.events.iter().map(|e| Event { state: e.state, time: e.t }).collect();
        let horizon = rec.horizon.or_else(|| events.last().map(|e| e.time)).unwrap_or(0.0);
        let trail = ContinuousTrail::new(events, horizon, rec.absorbed)
            .map_err(|e| perr(e.to_string()))?
            .with_label(rec.true_chain);
        out.push(NamedTrail { id: rec.trail_id, trail });
    }
    Ok(out)
}

pub fn read_trails(path: &Path) -> Result<Vec<NamedTrail>> {
    parse_trails(&read_text(path)?, path)
}

pub fn trails_jsonl(trails: &[NamedTrail]) -> String {
    let mut s = String::new();
    for nt in trails {
        let x = &nt.trail;
        let rec = TrailRecord {
            trail_id: nt.id.clone(),
            true_chain: x.true_chain,
            events: x.events().iter().map(|e| EventRecord { t: e.time, state: e.state }).collect(),
            horizon: Some(x.horizon()),
            absorbed: x.absorbed(),
        };
        s.push_str(&serde_json::to_string(&rec).expect("plain data serializes"));
        s.push('\n');
    }
    s
}

pub fn write_trails(path: &Path, trails: &[NamedTrail]) -> Result<()> {
    write_text(path, &trails_jsonl(trails))
}

pub fn assignment_csv(ids: &[String], a: &SoftAssignment) -> String {
    let mut s = String::from("trail_id");
    for c in 1..=a.l() {
        let _ = write!(s, ",a_{c}");
    }
    s.push('\n');
    for (x, id) in ids.iter().enumerate() {
        s.push_str(&csv_field(id));
        for c in 0..a.l() {
            let _ = write!(s, ",{}", a.get(x, c));
        }
        s.push('\n');
    }
    s
}

pub fn read_assignment(path: &Path) -> Result<(Vec<String>, SoftAssignment)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Schema { path: path.to_path_buf(), message: e.to_string() })?;
    let l = rdr
        .headers()
        .map_err(|e| CliError::Schema { path: path.to_path_buf(), message: e.to_string() })?
        .len()
        .saturating_sub(1);
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let perr = |message: String| CliError::Parse { path: path.to_path_buf(), line: i + 2, message };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        ids.push(rec[0].to_string());
        for c in 1..=l {
            vals.push(rec[c].parse::<f64>().map_err(|e| perr(e.to_string()))?);
        }
    }
    let a = SoftAssignment::new(DMatrix::from_row_slice(ids.len(), l, &vals))?;
    Ok((ids, a))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn json_pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}
