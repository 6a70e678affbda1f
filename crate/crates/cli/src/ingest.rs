use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use ctmcmix::{ContinuousTrail, Event};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::io::{json_pretty, write_text, write_trails, NamedTrail};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    /// Split an entity's stream where consecutive events are more than this
    /// many seconds apart.
    pub gap: f64,
    pub top_k: usize,
    pub min_duration: Option<f64>,
    pub max_duration: Option<f64>,
    /// Tokens that end a trail when reached.
    pub absorbing_tokens: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { gap: 900.0, top_k: 10, min_duration: None, max_duration: None, absorbing_tokens: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub trails: Vec<NamedTrail>,
    /// Token of every state, indexed by state.
    pub states: Vec<String>,
}

/// Seconds since the epoch from either a number or an ISO-8601 timestamp.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let from_dt = |dt: NaiveDateTime| {
        let utc = dt.and_utc();
        utc.timestamp() as f64 + f64::from(utc.timestamp_subsec_nanos()) * 1e-9
    };
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(from_dt(dt.naive_utc()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(from_dt(dt));
        }
    }
    None
}

struct Row {
    entity: String,
    time: f64,
    token: String,
}

fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Schema { path: path.to_path_buf(), message: e.to_string() })?;
    let headers =
        rdr.headers().map_err(|e| CliError::Schema { path: path.to_path_buf(), message: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::Schema { path: path.to_path_buf(), message: format!("missing column {name}") })
    };
    let (ie, it, ik) = (col("entity_id")?, col("timestamp")?, col("token")?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Parse { path: path.to_path_buf(), line, message: e.to_string() })?;
        let raw = rec.get(it).unwrap_or("");
        let time = parse_timestamp(raw).ok_or_else(|| CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unparseable timestamp {raw:?}"),
        })?;
        rows.push(Row {
            entity: rec.get(ie).unwrap_or("").to_string(),
            time,
            token: rec.get(ik).unwrap_or("").to_string(),
        });
    }
    Ok(rows)
}

fn build_trail(events: &[(f64, usize)], absorbing: &[bool]) -> Option<ContinuousTrail> {
    let t0 = events.first()?.0;
    let mut out: Vec<Event> = Vec::new();
    let mut end = t0;
    let mut absorbed = false;
    for &(t, s) in events {
        end = t;
        if out.last().is_none_or(|e| e.state != s) {
            let time = t - t0;
            if out.last().is_some_and(|e| time <= e.time) {
                continue;
            }
            out.push(Event { state: s, time });
        }
        if absorbing[s] {
            absorbed = true;
            break;
        }
    }
    ContinuousTrail::new(out, end - t0, absorbed).ok()
}

/// Turns an event log into trails over the `top_k` most frequent tokens.
///
/// Events with other tokens are dropped, repeated tokens collapse into one
/// visit, and each entity's stream is split wherever the gap between
/// consecutive kept events exceeds `cfg.gap`.
pub fn ingest_rows(rows: &[(String, f64, String)], cfg: &IngestConfig) -> Result<Ingested> {
    if !(cfg.gap > 0.0) {
        return Err(CliError::config("gap", "must be positive"));
    }
    if cfg.top_k == 0 {
        return Err(CliError::config("top-k", "must be at least 1"));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for (_, _, tok) in rows {
        *freq.entry(tok.as_str()).or_default() += 1;
    }
    if cfg.top_k > freq.len() {
        return Err(CliError::config(
            "top-k",
            format!("{} requested but only {} distinct tokens", cfg.top_k, freq.len()),
        ));
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let states: Vec<String> = ranked.iter().take(cfg.top_k).map(|(t, _)| t.to_string()).collect();
    let index: HashMap<&str, usize> = states.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut absorbing = vec![false; states.len()];
    for tok in &cfg.absorbing_tokens {
        if let Some(&i) = index.get(tok.as_str()) {
            absorbing[i] = true;
        }
    }
    let mut by_entity: BTreeMap<&str, Vec<(f64, usize)>> = BTreeMap::new();
    for (entity, time, tok) in rows {
        if let Some(&s) = index.get(tok.as_str()) {
            by_entity.entry(entity.as_str()).or_default().push((*time, s));
        }
    }
    let mut trails = Vec::new();
    for (entity, mut events) in by_entity {
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pieces: Vec<&[(f64, usize)]> = Vec::new();
        let mut start = 0;
        for i in 1..=events.len() {
            if i == events.len() || events[i].0 - events[i - 1].0 > cfg.gap {
                pieces.push(&events[start..i]);
                start = i;
            }
        }
        for (k, piece) in pieces.into_iter().enumerate() {
            let Some(trail) = build_trail(piece, &absorbing) else { continue };
            let d = trail.horizon();
            if cfg.min_duration.is_some_and(|lo| d < lo) || cfg.max_duration.is_some_and(|hi| d > hi) {
                continue;
            }
            trails.push(NamedTrail { id: format!("{entity}#{k}"), trail });
        }
    }
    Ok(Ingested { trails, states })
}

pub fn ingest(path: &Path, cfg: &IngestConfig) -> Result<Ingested> {
    let rows: Vec<(String, f64, String)> = read_rows(path)?.into_iter().map(|r| (r.entity, r.time, r.token)).collect();
    ingest_rows(&rows, cfg)
}

pub fn cmd_ingest(events: &Path, cfg: &IngestConfig, trails_out: &Path, states_out: &Path) -> Result<Ingested> {
    let data = ingest(events, cfg)?;
    write_trails(trails_out, &data.trails)?;
    write_text(states_out, &json_pretty(&json!({ "states": data.states })))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[(&str, f64, &str)]) -> Vec<(String, f64, String)> {
        v.iter().map(|(e, t, k)| (e.to_string(), *t, k.to_string())).collect()
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("12.5"), Some(12.5));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00Z"), Some(60.0));
        assert_eq!(parse_timestamp("1970-01-01 00:00:02.5"), Some(2.5));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn splits_on_gaps() {
        let r = rows(&[("u", 0.0, "a"), ("u", 60.0, "b"), ("u", 60.0 + 1200.0, "a"), ("u", 1300.0, "b")]);
        let out = ingest_rows(&r, &IngestConfig { top_k: 2, ..IngestConfig::default() }).unwrap();
        assert_eq!(out.trails.len(), 2);
        assert_eq!(out.trails[1].trail.events()[0].time, 0.0);
    }

    #[test]
    fn identical_tokens_give_single_state_trails() {
        let r = rows(&[("u", 0.0, "x"), ("u", 5.0, "x"), ("v", 1.0, "x")]);
        let out = ingest_rows(&r, &IngestConfig { top_k: 1, ..IngestConfig::default() }).unwrap();
        assert_eq!(out.trails.len(), 2);
        assert!(out.trails.iter().all(|t| t.trail.events().len() == 1));
        assert_eq!(out.trails[0].trail.horizon(), 5.0);
    }

    #[test]
    fn duration_window() {
        let r = rows(&[("u", 0.0, "a"), ("u", 5.0, "b"), ("v", 0.0, "a"), ("v", 15.0, "b")]);
        let cfg =
            IngestConfig { top_k: 2, min_duration: Some(10.0), max_duration: Some(20.0), ..IngestConfig::default() };
        let out = ingest_rows(&r, &cfg).unwrap();
        assert_eq!(out.trails.len(), 1);
        assert_eq!(out.trails[0].id, "v#0");
    }

    #[test]
    fn too_many_states_requested() {
        let r = rows(&[("u", 0.0, "a")]);
        assert!(ingest_rows(&r, &IngestConfig { top_k: 2, ..IngestConfig::default() }).is_err());
    }

    #[test]
    fn absorbing_token_ends_trail() {
        let r = rows(&[("u", 0.0, "a"), ("u", 1.0, "goal"), ("u", 2.0, "a")]);
        let cfg = IngestConfig { top_k: 2, absorbing_tokens: vec!["goal".into()], ..IngestConfig::default() };
        let out = ingest_rows(&r, &cfg).unwrap();
        let t = &out.trails[0].trail;
        assert!(t.absorbed());
        assert_eq!(t.events().len(), 2);
        assert_eq!(t.horizon(), 1.0);
    }
}
