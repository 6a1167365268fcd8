//! Orchestration: one output directory per run holding `manifest.json`,
//! `traces/`, `diagnostics/` and `summary.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use fidcov::diagnostics::{baseline_statistics, summarize, StatisticSummary, TidyRow};
use fidcov::samplers::{initial_covariate, random_partition, sample_full_model};
use fidcov::scenario::equal_sizes;
use fidcov::{
    co_membership, compute_statistics, one_sided_pvalue, qq_coverage, simulate_scenario, ChainConfig, ChainState,
    ChainTrace, CliqueScorer, ConfidenceCurve, CovariateMatrix, Generator, GfdEvaluator, Initializer, Norm,
    ObservationSet, RngStream, SamplerKind, ScenarioSpec, SpdMatrix, Statistic, SweepOrder,
};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{GeneratorKind, InitArg, Mode, Penalty, RunConfig};
use crate::error::{CliError, Result};
use crate::ingest::{ingest_csv, read_square_matrix};

/// Stream id reserved for the Monte Carlo subsets used when scoring draws.
const SCORING_STREAM: u64 = u64::MAX;
const CURVE_POINTS: usize = 101;

/// Executes `config` and returns the summary that was written to `summary.json`.
pub fn run(config: &RunConfig) -> Result<Value> {
    let out = &config.out;
    for dir in [out.clone(), out.join("traces"), out.join("diagnostics")] {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let summary = match config.mode {
        Mode::FitFull | Mode::FitClique | Mode::FitGeneral => fit(config)?,
        Mode::Simulate => simulate(config)?,
        Mode::Coverage => coverage(config)?,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_manifest(config: &RunConfig, data: Value) -> Result<()> {
    let manifest = json!({
        "tool": "fidcov",
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "data": data,
    });
    write_json(&config.out.join("manifest.json"), &manifest)
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Runs `f(0..count)` on all cores, keeping results in index order.
fn parallel_map<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(count.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= count {
                    break;
                }
                let r = f(k);
                slots.lock().expect("no worker panicked")[k] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every index was visited"))
        .collect()
}

/// Truth for diagnostics: `--sigma0` wins, else `A₀ A₀ᵀ` from `--a0`.
fn load_truth(config: &RunConfig, p: usize) -> Result<(Option<SpdMatrix<f64>>, Option<CovariateMatrix<f64>>)> {
    let check = |path: &PathBuf, m: &DMatrix<f64>| {
        if m.nrows() != p {
            return Err(CliError::Data {
                path: path.clone(),
                message: format!("matrix is {0}x{0} but the data have {p} columns", m.nrows()),
            });
        }
        Ok(())
    };
    let a0 = match &config.a0 {
        Some(path) => {
            let m = read_square_matrix(path)?;
            check(path, &m)?;
            Some(CovariateMatrix::from_matrix(m)?)
        }
        None => None,
    };
    let sigma0 = match &config.sigma0 {
        Some(path) => {
            let m = read_square_matrix(path)?;
            check(path, &m)?;
            Some(SpdMatrix::new(m)?)
        }
        None => match &a0 {
            Some(a) => Some(a.covariance()?),
            None => None,
        },
    };
    Ok((sigma0, a0))
}

fn initializer(config: &RunConfig, sigma0: Option<&SpdMatrix<f64>>, a0: Option<&CovariateMatrix<f64>>) -> Result<Initializer<f64>> {
    Ok(match config.init.unwrap_or(InitArg::SnPa) {
        InitArg::SnPa => Initializer::SnPa,
        InitArg::Chol => Initializer::Chol,
        InitArg::Dcho => Initializer::Dcho,
        InitArg::Diag => Initializer::Diag,
        InitArg::Oracle => match (a0, sigma0) {
            (Some(a), _) => Initializer::Oracle(a.clone()),
            (None, Some(s)) => Initializer::Oracle(CovariateMatrix::from_matrix(s.chol_factor())?),
            (None, None) => return Err(CliError::Config("oracle init requires sigma0 or a0".into())),
        },
    })
}

fn chain_config(config: &RunConfig, sampler: SamplerKind) -> ChainConfig {
    ChainConfig {
        norm: config.norm.choice(),
        burn_in: config.burn_in,
        window: config.window,
        thin: config.thin,
        ..ChainConfig::new(sampler)
    }
}

fn run_chains(config: &RunConfig, obs: &ObservationSet<f64>, sigma0: Option<&SpdMatrix<f64>>, a0: Option<&CovariateMatrix<f64>>) -> Result<Vec<ChainTrace<f64>>> {
    let p = obs.p();
    match config.mode {
        Mode::FitFull => parallel_map(config.chains, |k| {
            Ok(sample_full_model(obs, config.window, &mut RngStream::new(config.seed, k as u64))?)
        }),
        Mode::FitClique => {
            let sampler = SamplerKind::Gibbs {
                penalized: config.penalty == Some(Penalty::Clique),
                order: SweepOrder::Ascending,
                draw_covariance: true,
            };
            let cfg = chain_config(config, sampler);
            parallel_map(config.chains, |k| {
                let mut rng = RngStream::new(config.seed, k as u64);
                let scorer = CliqueScorer::new(obs, Norm::L2, false);
                let start = ChainState::for_clique(&scorer, random_partition(p, &mut rng));
                Ok(fidcov::run_chain(obs, &cfg, start, &mut rng)?)
            })
        }
        Mode::FitGeneral => {
            let max_c = config.max_c.ok_or_else(|| CliError::Config("fit-general requires maxc".into()))?;
            let cfg = chain_config(config, SamplerKind::ReversibleJump { max_c });
            let init = initializer(config, sigma0, a0)?;
            let a = initial_covariate(obs, &init, Some(max_c))?;
            parallel_map(config.chains, |k| {
                let mut rng = RngStream::new(config.seed, k as u64);
                let target = GfdEvaluator::new(obs, Norm::L2, true);
                let start = ChainState::for_covariate(&target, a.clone());
                Ok(fidcov::run_chain(obs, &cfg, start, &mut rng)?)
            })
        }
        Mode::Simulate | Mode::Coverage => unreachable!("not a fitting mode"),
    }
}

fn write_trace(dir: &Path, k: usize, trace: &ChainTrace<f64>) -> Result<()> {
    let path = dir.join(format!("chain-{k}.ndjson"));
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    trace.write_ndjson(&mut w).map_err(|e| CliError::io(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let path = dir.join(format!("chain-{k}-log-density.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["iteration", "log_density"])?;
    for (t, v) in trace.log_density.iter().enumerate() {
        w.write_record([(t + 1).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

#[derive(Serialize)]
struct ChainDigest {
    chain: usize,
    seed: u64,
    stream_id: u64,
    draws: usize,
    acceptance: f64,
    jump_acceptance: Option<f64>,
}

fn fit(config: &RunConfig) -> Result<Value> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{} requires an input file", config.mode)))?;
    let obs = ingest_csv(input)?;
    let (n, p) = (obs.n(), obs.p());
    let (sigma0, a0) = load_truth(config, p)?;
    write_manifest(config, json!({ "input": input, "n": n, "p": p }))?;

    let traces = run_chains(config, &obs, sigma0.as_ref(), a0.as_ref())?;
    let trace_dir = config.out.join("traces");
    for (k, t) in traces.iter().enumerate() {
        write_trace(&trace_dir, k, t)?;
    }

    let requested: Vec<Statistic> = Statistic::ALL
        .into_iter()
        .filter(|s| sigma0.is_some() || !s.needs_truth())
        .collect();
    let norm = Norm::build(config.norm.choice(), n, p, &mut RngStream::new(config.seed, SCORING_STREAM));
    let mut tidy: Vec<TidyRow> = Vec::new();
    for (k, t) in traces.iter().enumerate() {
        let table = compute_statistics(&t.draws, &obs, sigma0.as_ref(), &norm, &requested)?;
        tidy.extend(table.tidy(k as u64));
    }
    let diag_dir = config.out.join("diagnostics");
    let mut w = csv::Writer::from_path(diag_dir.join("statistics.csv"))?;
    for row in &tidy {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(diag_dir.join("statistics.csv"), e))?;

    let mut summaries: Vec<StatisticSummary> = Vec::new();
    let mut w = csv::Writer::from_path(diag_dir.join("confidence_curves.csv"))?;
    w.write_record(["statistic", "alpha", "lower", "upper"])?;
    for s in &requested {
        let values: Vec<f64> = tidy.iter().filter(|r| r.statistic == s.name()).map(|r| r.value).collect();
        if let Some(sum) = summarize(*s, &values) {
            summaries.push(sum);
        }
        if let Ok(curve) = ConfidenceCurve::new(*s, &values) {
            for (alpha, lo, hi) in curve.curve(CURVE_POINTS) {
                w.write_record([s.name().to_string(), alpha.to_string(), lo.to_string(), hi.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(diag_dir.join("confidence_curves.csv"), e))?;

    let chains: Vec<ChainDigest> = traces
        .iter()
        .enumerate()
        .map(|(k, t)| ChainDigest {
            chain: k,
            seed: t.seed,
            stream_id: t.stream_id,
            draws: t.len(),
            acceptance: t.acceptance,
            jump_acceptance: t.jump_acceptance,
        })
        .collect();
    let mut summary = json!({
        "mode": config.mode,
        "n": n,
        "p": p,
        "chains": chains,
        "statistics": summaries,
    });
    if let Some(s0) = &sigma0 {
        summary["baseline"] = serde_json::to_value(baseline_statistics(&obs, s0)?)?;
    }
    let draws = || traces.iter().flat_map(|t| t.draws.iter());
    match config.mode {
        Mode::FitFull => {
            let count = draws().count();
            let mut mean = DMatrix::<f64>::zeros(p, p);
            for d in draws() {
                mean += d.sigma.as_ref().expect("full-model draws carry Σ").matrix();
            }
            mean /= count as f64;
            let log_d: Vec<f64> = draws().map(|d| d.sigma.as_ref().expect("Σ").log_det()).collect();
            let iw = json!({
                "dof": n,
                "scale": "n * S_n",
                "draws": count,
                "mean_sigma": rows(&mean),
                "sample_covariance": rows(obs.cov()),
                "log_det": summarize(Statistic::LogD, &log_d),
            });
            write_json(&config.out.join("iw_summary.json"), &iw)?;
        }
        Mode::FitClique => {
            let models: Vec<_> = draws().filter_map(|d| d.clique_model()).collect();
            let cm = co_membership(models.iter().copied())?;
            write_matrix_csv(&diag_dir.join("co_membership.csv"), &cm.matrix)?;
            summary["clique_model"] = json!(cm.threshold(0.5).to_string());
            summary["modal_model"] = json!(fidcov::CoMembershipMatrix::modal_model(models.iter().copied()).map(|m| m.to_string()));
        }
        Mode::FitGeneral => {
            let patterns: Vec<_> = draws().filter_map(|d| d.pattern()).collect();
            let active: f64 = patterns.iter().map(|pt| pt.active_count() as f64).sum::<f64>() / patterns.len().max(1) as f64;
            summary["modal_pattern"] = json!(fidcov::diagnostics::modal(patterns.iter().copied()).map(|pt| pt.to_string()));
            summary["mean_active_entries"] = json!(active);
        }
        Mode::Simulate | Mode::Coverage => {}
    }
    Ok(summary)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn scenario_spec(config: &RunConfig, seed: u64) -> Result<ScenarioSpec> {
    let s = &config.scenario;
    let generator = match s.generator {
        GeneratorKind::Clique => Generator::Clique {
            sizes: equal_sizes(s.p, s.cliques)?,
            intra_corr: s.intra_corr,
        },
        GeneratorKind::Sparse => Generator::Sparse {
            pattern: None,
            max_c: config.max_c.ok_or_else(|| CliError::Config("the sparse generator requires maxc".into()))?,
        },
    };
    Ok(ScenarioSpec {
        p: s.p,
        n: s.n,
        generator,
        seed,
    })
}

fn simulate(config: &RunConfig) -> Result<Value> {
    let spec = scenario_spec(config, config.seed)?;
    write_manifest(config, json!({ "scenario": spec }))?;
    let sc = simulate_scenario::<f64>(&spec)?;
    let out = &config.out;
    let mut w = csv::Writer::from_path(out.join("data.csv"))?;
    w.write_record((1..=spec.p).map(|j| format!("y{j}")))?;
    let data = sc.obs.data();
    for i in 0..data.nrows() {
        w.write_record((0..data.ncols()).map(|j| data[(i, j)].to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(out.join("data.csv"), e))?;
    write_matrix_csv(&out.join("sigma0.csv"), sc.sigma0.matrix())?;
    write_matrix_csv(&out.join("a0.csv"), sc.a0.entries())?;
    let truth = json!({
        "clique_model": sc.m0.as_ref().map(|m| m.to_string()),
        "pattern": sc.a0.pattern().to_string(),
        "log_det_sigma0": sc.sigma0.log_det(),
    });
    write_json(&out.join("truth.json"), &truth)?;
    Ok(json!({
        "mode": config.mode,
        "n": spec.n,
        "p": spec.p,
        "files": ["data.csv", "sigma0.csv", "a0.csv", "truth.json"],
        "baseline": baseline_statistics(&sc.obs, &sc.sigma0).ok(),
    }))
}

#[derive(Serialize)]
struct PvalueRow {
    rep: usize,
    scenario_seed: u64,
    pvalue: f64,
}

fn coverage(config: &RunConfig) -> Result<Value> {
    write_manifest(config, json!({ "scenario": scenario_spec(config, config.seed)? }))?;
    let sampler = SamplerKind::Gibbs {
        penalized: config.penalty == Some(Penalty::Clique),
        order: SweepOrder::Ascending,
        draw_covariance: true,
    };
    let cfg = chain_config(config, sampler);
    let rows: Vec<PvalueRow> = parallel_map(config.reps, |rep| {
        let scenario_seed = config.seed.wrapping_add(rep as u64);
        let sc = simulate_scenario::<f64>(&scenario_spec(config, scenario_seed)?)?;
        // scenario streams use id 0, chains use 1 + rep
        let mut rng = RngStream::new(config.seed, rep as u64 + 1);
        let scorer = CliqueScorer::new(&sc.obs, Norm::L2, false);
        let start = ChainState::for_clique(&scorer, random_partition(sc.obs.p(), &mut rng));
        let trace = fidcov::run_chain(&sc.obs, &cfg, start, &mut rng)?;
        let table = compute_statistics(&trace.draws, &sc.obs, None, &Norm::L2, &[Statistic::LogD])?;
        let pvalue = one_sided_pvalue(&table.column(Statistic::LogD), sc.sigma0.log_det())?;
        Ok(PvalueRow {
            rep,
            scenario_seed,
            pvalue,
        })
    })?;
    let diag_dir = config.out.join("diagnostics");
    let mut w = csv::Writer::from_path(diag_dir.join("pvalues.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(diag_dir.join("pvalues.csv"), e))?;
    let pvalues: Vec<f64> = rows.iter().map(|r| r.pvalue).collect();
    let qq = qq_coverage(&pvalues)?;
    let mut w = csv::Writer::from_path(diag_dir.join("qq.csv"))?;
    for r in &qq.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(diag_dir.join("qq.csv"), e))?;
    Ok(json!({
        "mode": config.mode,
        "reps": config.reps,
        "statistic": Statistic::LogD.name(),
        "ks_distance": qq.ks_distance,
        "band_halfwidth": qq.band_halfwidth,
        "inside_band": qq.inside_band,
    }))
}
