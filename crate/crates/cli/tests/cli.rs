use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fidcov::samplers::random_partition;
use fidcov::{ChainConfig, ChainState, CliqueScorer, Norm, RngStream, SamplerKind, SweepOrder};
use fidcov_cli::{build_config, ingest_csv, parse_config_text, run, CliError, Mode, RunConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fidcov"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn simulated(dir: &Path, p: usize, n: usize) -> PathBuf {
    let out = dir.join("sim");
    let cfg = build_config(
        Mode::Simulate,
        &[],
        &flags(&[
            ("out", out.to_str().unwrap()),
            ("p", &p.to_string()),
            ("n", &n.to_string()),
            ("cliques", "2"),
            ("seed", "7"),
        ]),
    )
    .unwrap();
    run(&cfg).unwrap();
    out
}

#[test]
fn ingest_small_identity_file() {
    let dir = tempfile::tempdir().unwrap();
    let obs = ingest_csv(&write(dir.path(), "a.csv", "1,0\n0,1\n")).unwrap();
    assert_eq!((obs.n(), obs.p()), (2, 2));
}

#[test]
fn ingest_reports_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    let err = ingest_csv(&write(dir.path(), "r.csv", "a,b\n1,2\n3,4,5\n")).unwrap_err();
    match err {
        CliError::Input { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other}"),
    }
    let err = ingest_csv(&write(dir.path(), "n.csv", "1,2\n3,abc\n")).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn ingest_header_empty_and_zero_columns() {
    let dir = tempfile::tempdir().unwrap();
    let obs = ingest_csv(&write(dir.path(), "h.csv", "x,y\n1,2\n3,5\n")).unwrap();
    assert_eq!((obs.n(), obs.p()), (2, 2));
    assert!(matches!(ingest_csv(&write(dir.path(), "e.csv", "")), Err(CliError::Data { .. })));
    let err = ingest_csv(&write(dir.path(), "z.csv", "1,0\n2,0\n")).unwrap_err();
    assert!(err.to_string().contains("column 2"), "{err}");
}

#[test]
fn flags_override_config_file() {
    let file = parse_config_text("chains = 3\nthin = 2\nwindow = 50\n").unwrap();
    let cfg = build_config(Mode::FitClique, &file, &flags(&[("input", "x.csv"), ("thin", "5")])).unwrap();
    assert_eq!((cfg.chains, cfg.thin, cfg.window), (3, 5, 50));
}

#[test]
fn invalid_configurations_rejected() {
    let general = build_config(Mode::FitGeneral, &[], &flags(&[("input", "x.csv")]));
    assert!(matches!(general, Err(CliError::Config(m)) if m.contains("maxc")));
    let oracle = build_config(
        Mode::FitGeneral,
        &[],
        &flags(&[("input", "x.csv"), ("maxc", "3"), ("init", "oracle")]),
    );
    assert!(matches!(oracle, Err(CliError::Config(_))));
    assert!(build_config(Mode::FitFull, &[], &flags(&[("input", "x.csv"), ("thin", "0")])).is_err());
    assert!(build_config(Mode::FitClique, &[], &flags(&[("input", "x.csv"), ("penalty", "mdl")])).is_err());
}

#[test]
fn binary_emits_error_json_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "1,0\n0,1\n1,1\n");
    let output = bin()
        .args(["fit-general", "--input", data.to_str().unwrap(), "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let ragged = write(dir.path(), "bad.csv", "1,2\n3\n");
    let output = bin()
        .args(["fit-full", "--input", ragged.to_str().unwrap(), "--out"])
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(err["error"]["line"], 2);
}

#[test]
fn fit_full_writes_inverse_wishart_summary() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 4, 200);
    let out = dir.path().join("full");
    let status = bin()
        .args(["fit-full", "--chains", "2", "--window", "200", "--input"])
        .arg(sim.join("data.csv"))
        .arg("--sigma0")
        .arg(sim.join("sigma0.csv"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let iw = read_json(&out.join("iw_summary.json"));
    assert_eq!(iw["draws"], 400);
    assert_eq!(iw["dof"], 200);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["mode"], "fit-full");
    assert_eq!(manifest["config"]["seed"], 1);
    assert!(out.join("traces/chain-1.ndjson").exists());
    let stats = fs::read_to_string(out.join("diagnostics/statistics.csv")).unwrap();
    assert!(stats.starts_with("chain,draw,iteration,statistic,value"));
    assert!(stats.contains("D2Sig"));
}

#[test]
fn fit_clique_recovers_simulated_cliques() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 6, 500);
    let cfg = build_config(
        Mode::FitClique,
        &[],
        &flags(&[
            ("input", sim.join("data.csv").to_str().unwrap()),
            ("out", dir.path().join("fc").to_str().unwrap()),
            ("chains", "2"),
            ("burn-in", "100"),
            ("window", "200"),
        ]),
    )
    .unwrap();
    let summary = run(&cfg).unwrap();
    let truth = read_json(&sim.join("truth.json"));
    assert_eq!(summary["clique_model"], truth["clique_model"]);
    assert!(dir.path().join("fc/diagnostics/co_membership.csv").exists());
}

#[test]
fn rerun_from_manifest_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 5, 100);
    let first = dir.path().join("a");
    let cfg = build_config(
        Mode::FitGeneral,
        &[],
        &flags(&[
            ("input", sim.join("data.csv").to_str().unwrap()),
            ("out", first.to_str().unwrap()),
            ("maxc", "2"),
            ("chains", "2"),
            ("burn-in", "200"),
            ("window", "300"),
            ("seed", "99"),
        ]),
    )
    .unwrap();
    run(&cfg).unwrap();
    let manifest = read_json(&first.join("manifest.json"));
    let mut again: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    again.out = dir.path().join("b");
    run(&again).unwrap();
    for k in 0..2 {
        let name = format!("traces/chain-{k}.ndjson");
        assert_eq!(
            fs::read(first.join(&name)).unwrap(),
            fs::read(dir.path().join("b").join(&name)).unwrap()
        );
    }
}

#[test]
fn chain_files_match_single_chain_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path(), 4, 200);
    let out = dir.path().join("multi");
    let cfg = build_config(
        Mode::FitClique,
        &[],
        &flags(&[
            ("input", sim.join("data.csv").to_str().unwrap()),
            ("out", out.to_str().unwrap()),
            ("chains", "3"),
            ("burn-in", "20"),
            ("window", "50"),
            ("seed", "4"),
        ]),
    )
    .unwrap();
    run(&cfg).unwrap();

    let obs = ingest_csv(&sim.join("data.csv")).unwrap();
    let mut chain = ChainConfig::new(SamplerKind::Gibbs {
        penalized: true,
        order: SweepOrder::Ascending,
        draw_covariance: true,
    });
    chain.burn_in = 20;
    chain.window = 50;
    for k in 0..3u64 {
        let mut rng = RngStream::new(4, k);
        let scorer = CliqueScorer::new(&obs, Norm::L2, false);
        let start = ChainState::for_clique(&scorer, random_partition(obs.p(), &mut rng));
        let trace = fidcov::run_chain(&obs, &chain, start, &mut rng).unwrap();
        let mut alone = Vec::new();
        trace.write_ndjson(&mut alone).unwrap();
        assert_eq!(alone, fs::read(out.join(format!("traces/chain-{k}.ndjson"))).unwrap());
    }
}

#[test]
fn coverage_writes_pvalues_and_qq_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov");
    let cfg = build_config(
        Mode::Coverage,
        &[],
        &flags(&[
            ("out", out.to_str().unwrap()),
            ("p", "4"),
            ("n", "200"),
            ("cliques", "2"),
            ("reps", "200"),
            ("burn-in", "20"),
            ("window", "150"),
        ]),
    )
    .unwrap();
    let summary = run(&cfg).unwrap();
    let pvalues = fs::read_to_string(out.join("diagnostics/pvalues.csv")).unwrap();
    assert_eq!(pvalues.lines().count(), 201);
    let qq = fs::read_to_string(out.join("diagnostics/qq.csv")).unwrap();
    assert!(qq.lines().next().unwrap().contains("lower"));
    assert!(summary["band_halfwidth"].as_f64().unwrap() > 0.0);
}
