//! Command-line front end: one subcommand per scenario plus `validate`.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod manifest;
pub mod scenarios;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Scenario, ScenarioConfig};
use manifest::{Manifest, MANIFEST_NAME};
use scenarios::Artifact;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spinwire", version, about = "Bang-bang control experiments on spin chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Population of the last spin over time, with and without control.
    FlowTrace(RunArgs),
    /// Optimized transfer for uniform chains of increasing length.
    UniformSweep(RunArgs),
    /// Minimum error over a grid of segment counts and target times.
    KtSweep(RunArgs),
    /// Controlled and uncontrolled transfer over disordered chains.
    DisorderEnsemble(RunArgs),
    /// Closed-loop algorithm comparison against a limited-precision oracle.
    ClosedLoopBench(RunArgs),
    /// Best uncontrolled transfer fidelity per chain length.
    BaselineScan(RunArgs),
    /// Check a configuration file without running it.
    Validate {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario file (TOML); built-in defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the file).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 runs serially. Output files do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub quiet: bool,
}

impl Command {
    fn scenario(&self) -> Option<(Scenario, &RunArgs)> {
        match self {
            Command::FlowTrace(a) => Some((Scenario::FlowTrace, a)),
            Command::UniformSweep(a) => Some((Scenario::UniformSweep, a)),
            Command::KtSweep(a) => Some((Scenario::KtSweep, a)),
            Command::DisorderEnsemble(a) => Some((Scenario::DisorderEnsemble, a)),
            Command::ClosedLoopBench(a) => Some((Scenario::ClosedLoopBench, a)),
            Command::BaselineScan(a) => Some((Scenario::BaselineScan, a)),
            Command::Validate { .. } => None,
        }
    }
}

/// Run the parsed command and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    match &cli.command {
        Command::Validate { path } => match ScenarioConfig::load(path) {
            Ok(c) => {
                println!("{}: valid {} configuration", path.display(), c.scenario);
                EXIT_OK
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                EXIT_CONFIG
            }
        },
        cmd => {
            let (scenario, args) = cmd.scenario().expect("scenario subcommand");
            let config = match resolve_config(scenario, args) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            let base_dir = args
                .config
                .as_deref()
                .and_then(Path::parent)
                .map(Path::to_path_buf)
                .unwrap_or_default();
            match execute(&config, &base_dir, args.jobs) {
                Ok(report) => {
                    if !args.quiet {
                        for line in &report.summary {
                            println!("{line}");
                        }
                        println!("wrote {} files to {}", report.files, report.out.display());
                    }
                    for f in &report.failures {
                        eprintln!("warning: {} failed: {}", f.instance, f.error);
                    }
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
    }
}

/// Load (or default) the configuration and apply command-line overrides.
pub fn resolve_config(scenario: Scenario, args: &RunArgs) -> Result<ScenarioConfig, ConfigError> {
    let mut config = match &args.config {
        Some(path) => {
            let mut c = ScenarioConfig::load(path)?;
            // A relative `out` in the file is relative to the file itself.
            if let (Some(out), Some(dir)) = (&c.out, path.parent()) {
                if out.is_relative() {
                    c.out = Some(dir.join(out));
                }
            }
            c
        }
        None => ScenarioConfig::defaults(scenario),
    };
    if config.scenario != scenario {
        return Err(ConfigError::Invalid(vec![config::Issue {
            field: "scenario".into(),
            message: format!("file describes `{}` but the subcommand is `{scenario}`", config.scenario),
            line: None,
        }]));
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.out {
        config.out = Some(o.clone());
    }
    Ok(config)
}

pub struct Report {
    pub out: PathBuf,
    pub files: usize,
    pub summary: Vec<String>,
    pub failures: Vec<scenarios::Failure>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Run(#[from] scenarios::RunError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot build thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Run a validated configuration and persist its outputs plus the manifest.
///
/// Files are written only after every computation has finished, so a
/// failed run leaves nothing behind.
pub fn execute(config: &ScenarioConfig, base_dir: &Path, jobs: usize) -> Result<Report, ExecError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let start = Instant::now();
    let outcome = pool.install(|| scenarios::run(config, base_dir))?;
    let wall = start.elapsed().as_secs_f64();
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(config.scenario.name()));
    let manifest = Manifest::new(config, pool.current_num_threads(), wall, &outcome.artifacts, &outcome.failures);
    let mut files = outcome.artifacts;
    files.push(Artifact {
        name: MANIFEST_NAME.into(),
        bytes: manifest.to_json().into_bytes(),
    });
    std::fs::create_dir_all(&out).map_err(|source| ExecError::Io {
        path: out.clone(),
        source,
    })?;
    for f in &files {
        let path = out.join(&f.name);
        std::fs::write(&path, &f.bytes).map_err(|source| ExecError::Io { path, source })?;
    }
    Ok(Report {
        out,
        files: files.len(),
        summary: outcome.summary,
        failures: outcome.failures,
    })
}
