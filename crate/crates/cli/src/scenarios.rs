//! Scenario runners. Each returns its data files in memory; nothing is
//! written here.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use spinwire_core::closed_loop::CompareOptions;
use spinwire_core::{
    compare_algorithms, multistart_runs, quantize_times, sample_disordered_chain, seed, ChainFile, ChainSpec,
    ControlSystem, NewtonOptions, OptimizationProblem, OptimizationResult, Phase, SwitchingSequence,
};

use crate::config::{ChainConfig, OptimizerConfig, Scenario, ScenarioConfig};

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// A sub-run that failed; the remaining instances are unaffected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub instance: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub failures: Vec<Failure>,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
}

/// Scenario-level failure (nothing could be computed).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct RunError(pub String);

impl From<spinwire_core::Error> for RunError {
    fn from(e: spinwire_core::Error) -> Self {
        RunError(e.to_string())
    }
}

type RunResult<T> = Result<T, RunError>;

pub fn run(config: &ScenarioConfig, base_dir: &Path) -> RunResult<Outcome> {
    match config.scenario {
        Scenario::FlowTrace => flow_trace(config, base_dir),
        Scenario::UniformSweep => uniform_sweep(config),
        Scenario::KtSweep => kt_sweep(config),
        Scenario::DisorderEnsemble => disorder_ensemble(config),
        Scenario::ClosedLoopBench => closed_loop_bench(config, base_dir),
        Scenario::BaselineScan => baseline_scan(config),
    }
}

/// Chain from the `[chain]` table; disorder draws from `disorder_seed`.
pub fn build_chain(c: &ChainConfig, disorder_seed: u64, base_dir: &Path) -> RunResult<ChainSpec> {
    if let Some(file) = &c.file {
        let path = base_dir.join(file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| RunError(format!("cannot read chain file {}: {e}", path.display())))?;
        return Ok(ChainFile::parse(&text)?.resolve()?);
    }
    let base = ChainSpec::uniform(c.model, c.n_spins)?;
    Ok(sample_disordered_chain(&base, c.epsilon, disorder_seed)?)
}

pub fn problem(o: &OptimizerConfig, segments: usize, t_max: f64, t_initial: Option<f64>) -> OptimizationProblem {
    OptimizationProblem {
        t_min: o.t_min,
        error_threshold: o.threshold,
        time_digits: o.time_digits,
        initial_time: t_initial,
        start_phase: o.start_phase,
        ..OptimizationProblem::new(segments, t_max)
    }
}

pub fn newton_options(o: &OptimizerConfig) -> NewtonOptions {
    NewtonOptions {
        max_iterations: o.max_iterations,
        max_step: o.max_step,
        regularization: o.regularization,
        ..NewtonOptions::default()
    }
}

fn best(runs: &[OptimizationResult]) -> &OptimizationResult {
    runs.iter()
        .reduce(|b, r| if r.error < b.error { r } else { b })
        .expect("at least one run")
}

/// Shortest round-trip form; exponent notation outside [1e-5, 1e16).
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("plain data");
    s.push('\n');
    s.into_bytes()
}

fn artifact(name: &str, bytes: Vec<u8>) -> Artifact {
    Artifact {
        name: name.to_string(),
        bytes,
    }
}

/// Run record without wall time, so data files are reproducible.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    seed: Option<u64>,
    error: f64,
    fidelity: f64,
    total_time: f64,
    segments: usize,
    iterations: usize,
    fidelity_evaluations: u64,
    converged: bool,
    stop_reason: spinwire_core::StopReason,
    sequence: &'a SwitchingSequence,
}

impl<'a> From<&'a OptimizationResult> for RunRecord<'a> {
    fn from(r: &'a OptimizationResult) -> Self {
        Self {
            seed: r.seed,
            error: r.error,
            fidelity: r.fidelity,
            total_time: r.total_time,
            segments: r.sequence.len(),
            iterations: r.iterations,
            fidelity_evaluations: r.fidelity_evaluations,
            converged: r.converged,
            stop_reason: r.stop_reason,
            sequence: &r.sequence,
        }
    }
}

/// Population of the last spin with and without control.
///
/// Streams: chain disorder `derive(seed, 0)`, multistart `derive(seed, 1)`.
fn flow_trace(config: &ScenarioConfig, base_dir: &Path) -> RunResult<Outcome> {
    let f = config.flow_trace.clone().unwrap_or_default();
    let spec = build_chain(&config.chain, seed::derive(config.seed, 0), base_dir)?;
    let sys = ControlSystem::from_chain(&spec, &config.chain.actuator)?;
    let o = &config.optimizer;
    let (seq, record) = match &f.sequence_file {
        Some(path) => {
            let path = base_dir.join(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| RunError(format!("cannot read sequence file {}: {e}", path.display())))?;
            let seq: SwitchingSequence = serde_json::from_str(&text)
                .map_err(|e| RunError(format!("invalid sequence file {}: {e}", path.display())))?;
            (seq, None)
        }
        None => {
            let p = problem(o, o.segments, o.t_max, o.t_initial);
            let runs = multistart_runs(&p, &sys, o.restarts, seed::derive(config.seed, 1), &newton_options(o))?;
            let b = best(&runs).clone();
            (b.sequence.clone(), Some(b))
        }
    };
    let trace = sys.population_trace(&seq, f.grid_step)?;
    let bounds: Vec<(Phase, f64, f64)> = seq
        .chronological()
        .scan(0.0, |start, (p, t)| {
            let s = *start;
            *start += t;
            Some((p, s, s + t))
        })
        .collect();
    let phase_at = |t: f64| {
        bounds
            .iter()
            .find(|(_, s, e)| t >= *s && t < *e)
            .or(bounds.last())
            .map_or(Phase::Off, |b| b.0)
    };
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|&(t, pop)| {
            vec![
                num(t),
                num(pop),
                num(sys.free_fidelity(t)),
                u8::from(phase_at(t) == Phase::On).to_string(),
            ]
        })
        .collect();
    let seq_rows: Vec<Vec<String>> = bounds
        .iter()
        .enumerate()
        .map(|(i, (p, s, e))| {
            let phase = if *p == Phase::On { "on" } else { "off" };
            vec![(i + 1).to_string(), phase.to_string(), num(*s), num(e - s)]
        })
        .collect();
    let (fidelity, error) = sys.transfer_fidelity(&seq);
    let mut out = Outcome::default();
    out.summary.push(format!(
        "final population {fidelity:.6} (error {error:.3e}) at T = {:.4} with K = {}",
        seq.total_time(),
        seq.len()
    ));
    out.artifacts.push(artifact(
        "trace.csv",
        csv_bytes(
            &["t", "population_controlled", "population_uncontrolled", "actuator_on"],
            &rows,
        ),
    ));
    out.artifacts.push(artifact(
        "sequence.csv",
        csv_bytes(&["segment", "phase", "start", "duration"], &seq_rows),
    ));
    out.artifacts.push(artifact("sequence.json", json_bytes(&seq)));
    out.artifacts.push(artifact(
        "chain.toml",
        ChainFile::from_spec(&spec).to_toml().into_bytes(),
    ));
    #[derive(Serialize)]
    struct Summary<'a> {
        fidelity: f64,
        error: f64,
        total_time: f64,
        optimizer: Option<RunRecord<'a>>,
    }
    out.artifacts.push(artifact(
        "result.json",
        json_bytes(&Summary {
            fidelity,
            error,
            total_time: seq.total_time(),
            optimizer: record.as_ref().map(RunRecord::from),
        }),
    ));
    Ok(out)
}

/// Optimized transfer on uniform chains of growing length.
///
/// Chain `N` uses multistart seed `derive(seed, N)`.
fn uniform_sweep(config: &ScenarioConfig) -> RunResult<Outcome> {
    let u = config.uniform_sweep.clone().unwrap_or_default();
    let o = &config.optimizer;
    type SweepCell = Result<(Vec<OptimizationResult>, f64), String>;
    let cells: Vec<(usize, SweepCell)> = u
        .n_spins
        .values()
        .into_par_iter()
        .map(|n| {
            let result = (|| -> spinwire_core::Result<_> {
                let spec = ChainSpec::uniform(config.chain.model, n)?;
                let sys = ControlSystem::from_chain(&spec, &config.chain.actuator)?;
                let k = u.segments_per_spin * n;
                let p = problem(o, k, u.t_max_per_spin * n as f64, Some(u.t_initial_per_spin * n as f64));
                let runs = multistart_runs(&p, &sys, o.restarts, seed::derive(config.seed, n as u64), &newton_options(o))?;
                let target = p.system(&sys)?;
                let (_, qerr) = quantize_times(&target, &best(&runs).sequence, u.quantize_digits);
                Ok((runs, qerr))
            })();
            (n, result.map_err(|e| e.to_string()))
        })
        .collect();
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (n, cell) in &cells {
        match cell {
            Err(e) => out.failures.push(Failure {
                instance: format!("n_spins={n}"),
                error: e.clone(),
            }),
            Ok((runs, qerr)) => {
                let b = best(runs);
                let successes = runs.iter().filter(|r| r.converged).count();
                rows.push(vec![
                    n.to_string(),
                    (u.segments_per_spin * n).to_string(),
                    num(u.t_max_per_spin * *n as f64),
                    num(b.total_time),
                    num(b.error),
                    b.converged.to_string(),
                    successes.to_string(),
                    runs.len().to_string(),
                    u.quantize_digits.to_string(),
                    num(*qerr),
                ]);
                out.summary.push(format!(
                    "N = {n:3}: error {:.3e}, T = {:.2}, {successes}/{} starts converged, quantized error {qerr:.3e}",
                    b.error,
                    b.total_time,
                    runs.len()
                ));
                records.push((n, RunRecord::from(b)));
            }
        }
    }
    out.artifacts.push(artifact(
        "sweep.csv",
        csv_bytes(
            &[
                "n_spins",
                "segments",
                "t_max",
                "total_time",
                "error",
                "converged",
                "successes",
                "restarts",
                "quantize_digits",
                "quantized_error",
            ],
            &rows,
        ),
    ));
    #[derive(Serialize)]
    struct Cell<'a> {
        n_spins: usize,
        best: &'a RunRecord<'a>,
    }
    let cells_json: Vec<Cell> = records.iter().map(|(n, r)| Cell { n_spins: **n, best: r }).collect();
    out.artifacts.push(artifact("runs.json", json_bytes(&cells_json)));
    Ok(out)
}

/// Minimum error over restarts for each (K, T_0) cell, with
/// `t_max = t_initial = T_0`.
///
/// Cell `(K, T_0)` uses multistart seed `derive(derive(seed, K), T_0.to_bits())`.
fn kt_sweep(config: &ScenarioConfig) -> RunResult<Outcome> {
    let k = config.kt_sweep.clone().unwrap_or_default();
    let o = &config.optimizer;
    let spec = ChainSpec::uniform(config.chain.model, config.chain.n_spins)?;
    let sys = ControlSystem::from_chain(&spec, &config.chain.actuator)?;
    let grid: Vec<(usize, f64)> = k
        .segments
        .values()
        .into_iter()
        .flat_map(|kk| k.t_initial.values().into_iter().map(move |t| (kk, t)))
        .collect();
    let cells: Vec<_> = grid
        .par_iter()
        .map(|&(kk, t0)| {
            let p = problem(o, kk, t0, Some(t0));
            let s = seed::derive(seed::derive(config.seed, kk as u64), t0.to_bits());
            (kk, t0, multistart_runs(&p, &sys, o.restarts, s, &newton_options(o)))
        })
        .collect();
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for (kk, t0, cell) in cells {
        match cell {
            Err(e) => out.failures.push(Failure {
                instance: format!("segments={kk},t_initial={t0}"),
                error: e.to_string(),
            }),
            Ok(runs) => {
                let b = best(&runs);
                let successes = runs.iter().filter(|r| r.converged).count();
                rows.push(vec![
                    kk.to_string(),
                    num(t0),
                    num(b.error),
                    num(b.error.max(f64::MIN_POSITIVE).log10()),
                    num(b.total_time),
                    successes.to_string(),
                    runs.len().to_string(),
                ]);
            }
        }
    }
    out.summary.push(format!("{} cells", rows.len()));
    out.artifacts.push(artifact(
        "kt.csv",
        csv_bytes(
            &[
                "segments",
                "t_initial",
                "min_error",
                "log10_min_error",
                "total_time",
                "successes",
                "restarts",
            ],
            &rows,
        ),
    ));
    Ok(out)
}

/// Disordered chains with and without control.
///
/// Chain `i` uses `s = derive(seed, i)`: disorder from `derive(s, 0)`,
/// multistart from `derive(s, 1)`.
fn disorder_ensemble(config: &ScenarioConfig) -> RunResult<Outcome> {
    let d = config.disorder_ensemble.clone().unwrap_or_default();
    let o = &config.optimizer;
    let base = ChainSpec::uniform(config.chain.model, config.chain.n_spins)?;
    let p = problem(o, o.segments, o.t_max, o.t_initial);
    let cells: Vec<_> = (0..d.chains)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(config.seed, i as u64);
            let r = (|| -> spinwire_core::Result<_> {
                let spec = sample_disordered_chain(&base, config.chain.epsilon, seed::derive(s, 0))?;
                let sys = ControlSystem::from_chain(&spec, &config.chain.actuator)?;
                let target = p.system(&sys)?;
                let baseline = target.uncontrolled_peak(d.baseline_t_max, d.coarse_step)?;
                let runs = multistart_runs(&p, &sys, o.restarts, seed::derive(s, 1), &newton_options(o))?;
                Ok((baseline, best(&runs).clone()))
            })();
            (i, s, r)
        })
        .collect();
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let (mut fb, mut fc, mut ok) = (0.0, 0.0, 0usize);
    for (i, s, cell) in cells {
        match cell {
            Err(e) => out.failures.push(Failure {
                instance: format!("chain={i}"),
                error: e.to_string(),
            }),
            Ok(((bf, bt), r)) => {
                fb += bf;
                fc += r.fidelity;
                ok += 1;
                rows.push(vec![
                    i.to_string(),
                    s.to_string(),
                    num(bf),
                    num(bt),
                    num(r.fidelity),
                    num(r.total_time),
                    r.converged.to_string(),
                ]);
            }
        }
    }
    if ok > 0 {
        out.summary.push(format!(
            "{ok} chains: mean baseline fidelity {:.4}, mean controlled fidelity {:.6}",
            fb / ok as f64,
            fc / ok as f64
        ));
    }
    out.artifacts.push(artifact(
        "ensemble.csv",
        csv_bytes(
            &[
                "chain",
                "seed",
                "baseline_fidelity",
                "baseline_time",
                "controlled_fidelity",
                "controlled_time",
                "converged",
            ],
            &rows,
        ),
    ));
    Ok(out)
}

/// Closed-loop algorithm comparison.
fn closed_loop_bench(config: &ScenarioConfig, base_dir: &Path) -> RunResult<Outcome> {
    let b = config.closed_loop_bench.clone().unwrap_or_default();
    let o = &config.optimizer;
    let spec = build_chain(&config.chain, seed::derive(config.seed, u64::MAX), base_dir)?;
    let sys = ControlSystem::from_chain(&spec, &config.chain.actuator)?;
    let p = problem(o, o.segments, o.t_max, o.t_initial);
    let mut opts = CompareOptions {
        algorithms: b.algorithms.clone(),
        newton: newton_options(o),
        timing: b.timing,
        ..CompareOptions::default()
    };
    opts.quasi_newton.budget = b.budget;
    opts.quasi_newton.step = b.gradient_step;
    opts.simplex.budget = b.budget;
    opts.genetic.budget = b.budget;
    let report = compare_algorithms(&p, &sys, b.oracle, b.trials, config.seed, &opts)?;
    let mut out = Outcome::default();
    for r in &report.rows {
        out.summary.push(format!(
            "{:13} success {:5.1}%  <#F> {:9.1}  <T> {:8.3}  T_min {}",
            r.algorithm.name(),
            r.success_pct,
            r.mean_evals,
            r.mean_t,
            opt_num(r.min_t)
        ));
    }
    out.artifacts.push(artifact("table.csv", report.to_csv().into_bytes()));
    out.artifacts.push(artifact("trials.json", json_bytes(&report)));
    Ok(out)
}

/// Best free-evolution fidelity per length.
fn baseline_scan(config: &ScenarioConfig) -> RunResult<Outcome> {
    let b = config.baseline_scan.clone().unwrap_or_default();
    let cells: Vec<_> = b
        .n_spins
        .values()
        .into_par_iter()
        .map(|n| {
            let r = ChainSpec::uniform(config.chain.model, n)
                .and_then(|spec| ControlSystem::from_chain(&spec, &config.chain.actuator))
                .and_then(|sys| sys.uncontrolled_peak(b.t_max, b.coarse_step));
            (n, r)
        })
        .collect();
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for (n, cell) in cells {
        match cell {
            Err(e) => out.failures.push(Failure {
                instance: format!("n_spins={n}"),
                error: e.to_string(),
            }),
            Ok((f, t)) => rows.push(vec![n.to_string(), num(f), num(t)]),
        }
    }
    out.summary.push(format!("{} chain lengths", rows.len()));
    out.artifacts.push(artifact(
        "baseline.csv",
        csv_bytes(&["n_spins", "best_fidelity", "best_time"], &rows),
    ));
    Ok(out)
}
