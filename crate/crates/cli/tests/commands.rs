use std::fs;
use std::path::Path;
use std::process::Command;

use ctmcmix::simulate::{sample_trails, GeneratorConfig};
use ctmcmix::{CtMixture, RateMatrix};
use ctmcmix_cli::fit::{run_fit, FitOptions, Method};
use ctmcmix_cli::generate::{generate, generate_mixture, GenerateConfig};
use ctmcmix_cli::io::{
    parse_trails, read_assignment, read_trails, trails_jsonl, write_mixture, write_trails, NamedTrail,
};
use ctmcmix_cli::sweep::{run_sweep, sweep_csv, Axis, ExperimentConfig};
use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctmcmix"))
}

fn ok(cmd: &mut Command) {
    let out = cmd.output().expect("binary runs");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn gen_cfg(n: usize, l: usize, r: usize, horizon: f64, seed: u64) -> GenerateConfig {
    GenerateConfig { n, l, rate_upper: 1.0, seed, r, horizon, absorbing: vec![], factor: None, tau_hint: None }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_round_trips() {
    let dir = tempdir().unwrap();
    ok(bin()
        .args(["generate", "--n", "2", "--L", "1", "--r", "3", "--horizon", "10", "--seed", "7", "--out"])
        .arg(dir.path()));
    let text = fs::read_to_string(dir.path().join("trails.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let (_, in_memory) = generate(&gen_cfg(2, 1, 3, 10.0, 7)).unwrap();
    let reloaded = read_trails(&dir.path().join("trails.jsonl")).unwrap();
    assert_eq!(reloaded, in_memory);
    assert_eq!(trails_jsonl(&reloaded), text);
    let mixture = fs::read_to_string(dir.path().join("mixture.json")).unwrap();
    let (m, hint) = ctmcmix_cli::io::read_mixture(&dir.path().join("mixture.json")).unwrap();
    assert_eq!(ctmcmix_cli::io::mixture_json(&m, hint), mixture);
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    for d in [&a, &b] {
        ok(bin()
            .args(["generate", "--n", "4", "--L", "2", "--r", "20", "--horizon", "5", "--seed", "11", "--out"])
            .arg(d.path()));
    }
    for f in ["trails.jsonl", "mixture.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn absorbing_trails_end_at_absorber_or_horizon() {
    let mut cfg = gen_cfg(4, 2, 200, 20.0, 3);
    cfg.absorbing = vec![2, 3];
    let (_, trails) = generate(&cfg).unwrap();
    for t in &trails {
        let x = &t.trail;
        let last = x.final_state();
        assert!(last == 2 || last == 3 || !x.absorbed());
        assert!(x.absorbed() == (last == 2 || last == 3));
        assert!(x.events().last().unwrap().time <= x.horizon());
    }
    assert!(trails.iter().any(|t| t.trail.absorbed()));
}

#[test]
fn invalid_config_names_field() {
    let out =
        bin().args(["generate", "--n", "1", "--r", "3", "--horizon", "1", "--out", "/tmp/unused"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n"));
    let mut cfg = gen_cfg(3, 1, 3, 1.0, 0);
    cfg.absorbing = vec![5];
    assert!(generate(&cfg).is_err());
}

fn synthetic(dir: &Path, n: usize, l: usize, r: usize, horizon: f64, seed: u64) {
    ok(bin()
        .args(["generate", "--n", &n.to_string(), "--L", &l.to_string(), "--r", &r.to_string()])
        .args(["--horizon", &horizon.to_string(), "--seed", &seed.to_string(), "--out"])
        .arg(dir));
}

#[test]
fn groundtruth_fit_has_zero_clustering_error() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), 4, 2, 40, 10.0, 5);
    let out = dir.path().join("fit");
    ok(bin()
        .args(["fit", "--tau", "0.1", "--m", "100", "--L", "2", "--method", "groundtruth", "--trails"])
        .arg(dir.path().join("trails.jsonl"))
        .arg("--truth")
        .arg(dir.path().join("mixture.json"))
        .arg("--out")
        .arg(&out));
    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics["clustering_error"].as_f64(), Some(0.0));
    assert!(metrics["recovery_error"].as_f64().unwrap().is_finite());
    assert!(read_json(&out.join("timing.json"))["wall_seconds"].as_f64().is_some());
    let (ids, a) = read_assignment(&out.join("assignment.csv")).unwrap();
    assert_eq!(ids.len(), 40);
    assert_eq!(a.l(), 2);
}

#[test]
fn single_chain_assignment_is_all_ones() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), 3, 1, 10, 5.0, 1);
    let out = dir.path().join("fit");
    ok(bin()
        .args(["fit", "--tau", "0.2", "--L", "1", "--trails"])
        .arg(dir.path().join("trails.jsonl"))
        .arg("--out")
        .arg(&out));
    let text = fs::read_to_string(out.join("assignment.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("trail_id,a_1"));
    for line in lines {
        assert_eq!(line.split(',').nth(1), Some("1"));
    }
}

#[test]
fn seeded_fits_repeat_exactly() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), 4, 2, 30, 10.0, 9);
    for method in ["dem", "ktt", "cem"] {
        let mut metrics = Vec::new();
        let mut mixtures = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{method}{run}"));
            ok(bin()
                .args(["fit", "--tau", "0.1", "--m", "80", "--L", "2", "--seed", "4", "--method", method, "--trails"])
                .arg(dir.path().join("trails.jsonl"))
                .arg("--out")
                .arg(&out));
            metrics.push(fs::read(out.join("metrics.json")).unwrap());
            mixtures.push(fs::read(out.join("mixture.json")).unwrap());
        }
        assert_eq!(metrics[0], metrics[1], "{method}");
        assert_eq!(mixtures[0], mixtures[1], "{method}");
    }
}

#[test]
fn learning_ignores_true_labels() {
    let truth = ctmcmix::simulate::random_mixture(&GeneratorConfig::new(4, 2, 21)).unwrap();
    let trails: Vec<NamedTrail> = sample_trails(&truth, 40, 8.0, 22)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, trail)| NamedTrail { id: i.to_string(), trail })
        .collect();
    let scrambled: Vec<NamedTrail> = trails
        .iter()
        .enumerate()
        .map(|(i, t)| NamedTrail { id: t.id.clone(), trail: t.trail.clone().with_label(Some((i * 7 + 3) % 2)) })
        .collect();
    let unlabeled: Vec<NamedTrail> =
        trails.iter().map(|t| NamedTrail { id: t.id.clone(), trail: t.trail.clone().with_label(None) }).collect();
    for method in [Method::Dem, Method::Ktt, Method::Verylong, Method::Cem] {
        let mut opts = FitOptions::new(0.1, 2, method);
        opts.m = Some(60);
        opts.seed = 2;
        let a = run_fit(&trails, &opts, None).unwrap();
        let b = run_fit(&scrambled, &opts, None).unwrap();
        let c = run_fit(&unlabeled, &opts, None).unwrap();
        assert_eq!(a.mixture, b.mixture, "{method:?}");
        assert_eq!(a.mixture, c.mixture, "{method:?}");
        assert_eq!(a.assignment, b.assignment, "{method:?}");
    }
}

#[test]
fn fit_rejects_states_outside_reference() {
    let dir = tempdir().unwrap();
    synthetic(dir.path(), 4, 1, 10, 20.0, 2);
    let small = CtMixture::new(
        vec![RateMatrix::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap()],
        DMatrix::from_row_slice(1, 2, &[0.5, 0.5]),
    )
    .unwrap();
    write_mixture(&dir.path().join("small.json"), &small, None).unwrap();
    let out = bin()
        .args(["fit", "--tau", "0.1", "--L", "1", "--trails"])
        .arg(dir.path().join("trails.jsonl"))
        .arg("--truth")
        .arg(dir.path().join("small.json"))
        .arg("--out")
        .arg(dir.path().join("fit"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn malformed_trail_file_reports_line() {
    let err = parse_trails(
        "{\"trail_id\":\"a\",\"true_chain\":null,\"events\":[{\"t\":0,\"state\":0}]}\nnot json\n",
        Path::new("x.jsonl"),
    )
    .unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}

#[test]
fn sweep_has_one_row_per_cell() {
    let mut cfg = ExperimentConfig::new(Axis::M, vec![25.0, 50.0, 100.0], vec![Method::Dem, Method::Ktt]);
    cfg.n = 3;
    cfg.r = 20;
    cfg.repeats = 5;
    cfg.restarts = 1;
    cfg.max_iter = 20;
    let rows = run_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 30);
    let csv = sweep_csv(cfg.axis, &rows);
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with("axis,value,repeat,seed,method,recovery_error,clustering_error,loglik,seconds"));
    let again = run_sweep(&cfg).unwrap();
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!((a.value, a.repeat, a.method), (b.value, b.repeat, b.method));
        assert_eq!(a.recovery_error.to_bits(), b.recovery_error.to_bits());
    }
}

#[test]
fn sweep_rejects_bad_values() {
    let cfg = ExperimentConfig::new(Axis::Tau, vec![0.1, -1.0], vec![Method::Dem]);
    assert!(run_sweep(&cfg).is_err());
    let mut cfg = ExperimentConfig::new(Axis::Tau, vec![0.1], vec![Method::Dem]);
    cfg.repeats = 0;
    assert!(run_sweep(&cfg).is_err());
}

#[test]
fn sweep_cli_writes_csv() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    ok(bin()
        .args(["sweep", "--axis", "r", "--values", "10,20", "--methods", "dem,ktt", "--n", "3", "--m", "30"])
        .args(["--budget", "600", "--repeats", "2", "--restarts", "1", "--max-iter", "10", "--out"])
        .arg(&out));
    assert_eq!(fs::read_to_string(out).unwrap().lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn unit_factor_gives_identical_chains() {
    let mut cfg = gen_cfg(5, 2, 1, 1.0, 13);
    cfg.factor = Some(1.0);
    let m = generate_mixture(&cfg).unwrap();
    assert_eq!(m.chain(0), m.chain(1));
    let copy = CtMixture::new(vec![m.chain(0).clone(), m.chain(0).clone()], m.start().clone()).unwrap();
    assert_eq!(ctmcmix::metrics::recovery_error(&m, &copy).unwrap(), 0.0);
}

#[test]
fn writes_are_idempotent() {
    let dir = tempdir().unwrap();
    let (_, trails) = generate(&gen_cfg(3, 2, 5, 4.0, 1)).unwrap();
    let p = dir.path().join("t.jsonl");
    write_trails(&p, &trails).unwrap();
    let first = fs::read(&p).unwrap();
    write_trails(&p, &read_trails(&p).unwrap()).unwrap();
    assert_eq!(first, fs::read(&p).unwrap());
}
