//! Scenario configuration files (TOML, `schema_version = 1`).

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinwire_core::{Actuator, Algorithm, ModelKind, OracleMode, Regularization, StartPhase};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    FlowTrace,
    UniformSweep,
    KtSweep,
    DisorderEnsemble,
    ClosedLoopBench,
    BaselineScan,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::FlowTrace,
        Scenario::UniformSweep,
        Scenario::KtSweep,
        Scenario::DisorderEnsemble,
        Scenario::ClosedLoopBench,
        Scenario::BaselineScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FlowTrace => "flow-trace",
            Scenario::UniformSweep => "uniform-sweep",
            Scenario::KtSweep => "kt-sweep",
            Scenario::DisorderEnsemble => "disorder-ensemble",
            Scenario::ClosedLoopBench => "closed-loop-bench",
            Scenario::BaselineScan => "baseline-scan",
        }
    }

    /// Name of the table holding this scenario's own settings.
    pub fn section(self) -> &'static str {
        match self {
            Scenario::FlowTrace => "flow_trace",
            Scenario::UniformSweep => "uniform_sweep",
            Scenario::KtSweep => "kt_sweep",
            Scenario::DisorderEnsemble => "disorder_ensemble",
            Scenario::ClosedLoopBench => "closed_loop_bench",
            Scenario::BaselineScan => "baseline_scan",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The chain under study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub model: ModelKind,
    pub n_spins: usize,
    /// Relative bond disorder; drawn from the scenario seed.
    pub epsilon: f64,
    pub actuator: Actuator,
    /// Explicit chain file; overrides `model`, `n_spins` and `epsilon`.
    pub file: Option<PathBuf>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Heisenberg,
            n_spins: 10,
            epsilon: 0.0,
            actuator: Actuator::default(),
            file: None,
        }
    }
}

/// Model-based optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Number of segments K.
    pub segments: usize,
    pub t_max: f64,
    /// Total time of random initial sequences; defaults to `t_max`.
    pub t_initial: Option<f64>,
    pub t_min: f64,
    pub threshold: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub max_step: f64,
    pub regularization: Regularization,
    /// Round switching times to this many decimals during optimization.
    pub time_digits: Option<u32>,
    pub start_phase: StartPhase,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            segments: 40,
            t_max: 110.0,
            t_initial: None,
            t_min: 0.0,
            threshold: 1e-4,
            restarts: 10,
            max_iterations: 500,
            max_step: 2.0,
            regularization: Regularization::default(),
            time_digits: None,
            start_phase: StartPhase::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowTraceConfig {
    pub grid_step: f64,
    /// Replay a stored sequence (JSON) instead of optimizing.
    pub sequence_file: Option<PathBuf>,
}

impl Default for FlowTraceConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.05,
            sequence_file: None,
        }
    }
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntRange {
    pub start: usize,
    pub stop: usize,
    #[serde(default = "one")]
    pub step: usize,
}

fn one() -> usize {
    1
}

impl IntRange {
    pub fn values(&self) -> Vec<usize> {
        if self.step == 0 || self.start > self.stop {
            return Vec::new();
        }
        (self.start..=self.stop).step_by(self.step).collect()
    }
}

/// Inclusive real range with `start + i * step` grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl RealRange {
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || !(self.stop >= self.start) {
            return Vec::new();
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=count).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniformSweepConfig {
    pub n_spins: IntRange,
    pub segments_per_spin: usize,
    pub t_max_per_spin: f64,
    pub t_initial_per_spin: f64,
    pub quantize_digits: u32,
}

impl Default for UniformSweepConfig {
    fn default() -> Self {
        Self {
            n_spins: IntRange {
                start: 4,
                stop: 20,
                step: 2,
            },
            segments_per_spin: 4,
            t_max_per_spin: 12.0,
            t_initial_per_spin: 10.0,
            quantize_digits: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KtSweepConfig {
    pub segments: IntRange,
    /// Target times; each cell uses `t_max = t_initial = T_0`.
    pub t_initial: RealRange,
}

impl Default for KtSweepConfig {
    fn default() -> Self {
        Self {
            segments: IntRange {
                start: 10,
                stop: 40,
                step: 2,
            },
            t_initial: RealRange {
                start: 30.0,
                stop: 120.0,
                step: 10.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisorderEnsembleConfig {
    pub chains: usize,
    pub baseline_t_max: f64,
    pub coarse_step: f64,
}

impl Default for DisorderEnsembleConfig {
    fn default() -> Self {
        Self {
            chains: 20,
            baseline_t_max: 4000.0,
            coarse_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoopBenchConfig {
    pub trials: usize,
    pub oracle: OracleMode,
    pub algorithms: Vec<Algorithm>,
    pub budget: u64,
    /// Discrete-gradient step; defaults to the oracle's noise-aware choice.
    pub gradient_step: Option<f64>,
    /// Record wall times (makes the table differ between reruns).
    pub timing: bool,
}

impl Default for ClosedLoopBenchConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            oracle: OracleMode::Quantized { digits: 10 },
            algorithms: Algorithm::ALL.to_vec(),
            budget: spinwire_core::closed_loop::DEFAULT_BUDGET,
            gradient_step: None,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineScanConfig {
    pub n_spins: IntRange,
    pub t_max: f64,
    pub coarse_step: f64,
}

impl Default for BaselineScanConfig {
    fn default() -> Self {
        Self {
            n_spins: IntRange {
                start: 2,
                stop: 30,
                step: 1,
            },
            t_max: 4000.0,
            coarse_step: 0.05,
        }
    }
}

/// A complete, validated-on-load scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_trace: Option<FlowTraceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_sweep: Option<UniformSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kt_sweep: Option<KtSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder_ensemble: Option<DisorderEnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_loop_bench: Option<ClosedLoopBenchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_scan: Option<BaselineScanConfig>,
}

/// One violated constraint; `line` is 1-based when the key appears in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub field: String,
    pub message: String,
    pub line: Option<usize>,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}", parse_message(.line, .message))]
    Parse { line: Option<usize>, message: String },
    #[error("{} invalid setting(s):\n{}", .0.len(), join_issues(.0))]
    Invalid(Vec<Issue>),
}

fn parse_message(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("parse error at line {l}: {message}"),
        None => format!("parse error: {message}"),
    }
}

fn join_issues(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl ScenarioConfig {
    /// Built-in defaults for `scenario` (the section of that scenario filled in).
    pub fn defaults(scenario: Scenario) -> Self {
        let mut c = Self {
            schema_version: SCHEMA_VERSION,
            scenario,
            seed: 0,
            out: None,
            chain: ChainConfig::default(),
            optimizer: OptimizerConfig::default(),
            flow_trace: None,
            uniform_sweep: None,
            kt_sweep: None,
            disorder_ensemble: None,
            closed_loop_bench: None,
            baseline_scan: None,
        };
        c.fill_section();
        c
    }

    /// Insert defaults for the active scenario's section when absent.
    fn fill_section(&mut self) {
        match self.scenario {
            Scenario::FlowTrace => {
                self.flow_trace.get_or_insert_with(Default::default);
            }
            Scenario::UniformSweep => {
                self.uniform_sweep.get_or_insert_with(Default::default);
            }
            Scenario::KtSweep => {
                self.kt_sweep.get_or_insert_with(Default::default);
            }
            Scenario::DisorderEnsemble => {
                self.disorder_ensemble.get_or_insert_with(Default::default);
            }
            Scenario::ClosedLoopBench => {
                self.closed_loop_bench.get_or_insert_with(Default::default);
            }
            Scenario::BaselineScan => {
                self.baseline_scan.get_or_insert_with(Default::default);
            }
        }
    }

    /// Parse and validate; all constraint violations are reported together.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        let mut issues = config.issues();
        for issue in issues.iter_mut() {
            issue.line = locate(text, &issue.field);
        }
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
        config.fill_section();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every violated constraint (without line numbers).
    pub fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut bad = |field: &str, message: String| {
            out.push(Issue {
                field: field.to_string(),
                message,
                line: None,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            bad(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        let present: Vec<(&str, bool)> = vec![
            ("flow_trace", self.flow_trace.is_some()),
            ("uniform_sweep", self.uniform_sweep.is_some()),
            ("kt_sweep", self.kt_sweep.is_some()),
            ("disorder_ensemble", self.disorder_ensemble.is_some()),
            ("closed_loop_bench", self.closed_loop_bench.is_some()),
            ("baseline_scan", self.baseline_scan.is_some()),
        ];
        for (section, is_present) in present {
            if is_present && section != self.scenario.section() {
                bad(
                    section,
                    format!("section does not apply to scenario `{}`", self.scenario),
                );
            }
        }

        let c = &self.chain;
        let uniform_only = matches!(
            self.scenario,
            Scenario::UniformSweep | Scenario::KtSweep | Scenario::BaselineScan
        );
        if uniform_only && c.epsilon != 0.0 {
            bad("chain.epsilon", format!("scenario `{}` uses uniform chains only", self.scenario));
        }
        if c.file.is_some() && !matches!(self.scenario, Scenario::FlowTrace | Scenario::ClosedLoopBench) {
            bad("chain.file", format!("scenario `{}` does not take a chain file", self.scenario));
        }
        if c.file.is_none() && c.n_spins < 2 {
            bad("chain.n_spins", format!("need at least 2 spins, got {}", c.n_spins));
        }
        if !(c.epsilon >= 0.0) || !c.epsilon.is_finite() {
            bad("chain.epsilon", format!("must be a finite value >= 0, got {}", c.epsilon));
        }
        match c.actuator {
            Actuator::SwitchOffCoupling { m, n } | Actuator::AddCouplingDelta { m, n, .. } => {
                if m == 0 || n == 0 || m == n {
                    bad("chain.actuator", format!("sites must be distinct and 1-based, got ({m}, {n})"));
                }
            }
            Actuator::DiagonalShift { site, .. } => {
                if site == 0 {
                    bad("chain.actuator", "sites are 1-based".into());
                }
            }
        }

        let o = &self.optimizer;
        if o.segments < 1 {
            bad("optimizer.segments", "must be at least 1".into());
        }
        if !(o.t_max > 0.0) || !o.t_max.is_finite() {
            bad("optimizer.t_max", format!("must be positive, got {}", o.t_max));
        }
        if !(o.t_min >= 0.0) {
            bad("optimizer.t_min", format!("must be >= 0, got {}", o.t_min));
        } else if o.t_min > o.t_max {
            bad("optimizer.t_min", format!("t_min = {} exceeds t_max = {}", o.t_min, o.t_max));
        } else if o.t_min * o.segments as f64 > o.t_max {
            bad(
                "optimizer.t_min",
                format!("segments * t_min = {} exceeds t_max = {}", o.t_min * o.segments as f64, o.t_max),
            );
        }
        if let Some(t0) = o.t_initial {
            if !(t0 > 0.0) || t0 > o.t_max {
                bad("optimizer.t_initial", format!("must lie in (0, t_max], got {t0}"));
            }
        }
        if !(o.threshold > 0.0 && o.threshold < 1.0) {
            bad("optimizer.threshold", format!("must lie in (0, 1), got {}", o.threshold));
        }
        if o.restarts < 1 {
            bad("optimizer.restarts", "must be at least 1".into());
        }
        if !(o.max_step > 0.0) {
            bad("optimizer.max_step", format!("must be positive, got {}", o.max_step));
        }
        if matches!(o.time_digits, Some(d) if d == 0 || d > 12) {
            bad("optimizer.time_digits", "must lie in 1..=12".into());
        }

        if let Some(f) = &self.flow_trace {
            if !(f.grid_step > 0.0) {
                bad("flow_trace.grid_step", format!("must be positive, got {}", f.grid_step));
            }
        }
        if let Some(u) = &self.uniform_sweep {
            if u.n_spins.values().is_empty() || u.n_spins.start < 2 {
                bad("uniform_sweep.n_spins", "need a nonempty range with start >= 2".into());
            }
            if u.segments_per_spin < 1 {
                bad("uniform_sweep.segments_per_spin", "must be at least 1".into());
            }
            if !(u.t_max_per_spin > 0.0) {
                bad("uniform_sweep.t_max_per_spin", "must be positive".into());
            }
            if !(u.t_initial_per_spin > 0.0) || u.t_initial_per_spin > u.t_max_per_spin {
                bad(
                    "uniform_sweep.t_initial_per_spin",
                    "must lie in (0, t_max_per_spin]".into(),
                );
            }
            if u.quantize_digits == 0 || u.quantize_digits > 12 {
                bad("uniform_sweep.quantize_digits", "must lie in 1..=12".into());
            }
        }
        if let Some(k) = &self.kt_sweep {
            if k.segments.values().is_empty() || k.segments.start < 1 {
                bad("kt_sweep.segments", "need a nonempty range with start >= 1".into());
            }
            if k.t_initial.values().is_empty() || !(k.t_initial.start > 0.0) {
                bad("kt_sweep.t_initial", "need a nonempty range of positive times".into());
            }
        }
        if let Some(d) = &self.disorder_ensemble {
            if d.chains < 1 {
                bad("disorder_ensemble.chains", "must be at least 1".into());
            }
            if !(d.baseline_t_max > 0.0) {
                bad("disorder_ensemble.baseline_t_max", "must be positive".into());
            }
            if !(d.coarse_step > 0.0) {
                bad("disorder_ensemble.coarse_step", "must be positive".into());
            }
        }
        if let Some(b) = &self.closed_loop_bench {
            if b.trials < 1 {
                bad("closed_loop_bench.trials", "must be at least 1".into());
            }
            if b.algorithms.is_empty() {
                bad("closed_loop_bench.algorithms", "list at least one algorithm".into());
            }
            if b.budget < 1 {
                bad("closed_loop_bench.budget", "must be at least 1".into());
            }
            match b.oracle {
                OracleMode::Quantized { digits } if digits == 0 || digits > 15 => {
                    bad("closed_loop_bench.oracle", "digits must lie in 1..=15".into())
                }
                OracleMode::Sampled { shots: 0, .. } => {
                    bad("closed_loop_bench.oracle", "shots must be positive".into())
                }
                _ => {}
            }
            if matches!(b.gradient_step, Some(h) if !(h > 0.0)) {
                bad("closed_loop_bench.gradient_step", "must be positive".into());
            }
        }
        if let Some(b) = &self.baseline_scan {
            if b.n_spins.values().is_empty() || b.n_spins.start < 2 {
                bad("baseline_scan.n_spins", "need a nonempty range with start >= 2".into());
            }
            if !(b.t_max > 0.0) {
                bad("baseline_scan.t_max", "must be positive".into());
            }
            if !(b.coarse_step > 0.0) {
                bad("baseline_scan.coarse_step", "must be positive".into());
            }
        }
        out
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `section.key` (or a top-level `key` / `[section]` header) in `text`.
fn locate(text: &str, field: &str) -> Option<usize> {
    let (section, key) = match field.split_once('.') {
        Some((s, k)) => (Some(s), k),
        None => (None, field),
    };
    let mut current: Option<String> = None;
    let key_of = |line: &str| -> Option<String> {
        let (lhs, _) = line.split_once('=')?;
        Some(lhs.trim().to_string())
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if section.is_none() && name == key {
                return Some(idx + 1);
            }
            if section.is_some_and(|s| name.starts_with(&format!("{s}.")) && name.ends_with(key)) {
                return Some(idx + 1);
            }
            current = Some(name);
            continue;
        }
        let Some(k) = key_of(line) else { continue };
        let matches = match (section, current.as_deref()) {
            (None, None) => k == key,
            (Some(s), Some(c)) => c == s && k == key,
            // dotted key at top level, e.g. `chain.epsilon = 1`
            (Some(s), None) => k == format!("{s}.{key}"),
            _ => false,
        };
        if matches {
            return Some(idx + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(IntRange { start: 4, stop: 10, step: 3 }.values(), vec![4, 7, 10]);
        let r = RealRange {
            start: 30.0,
            stop: 60.0,
            step: 10.0,
        };
        assert_eq!(r.values(), vec![30.0, 40.0, 50.0, 60.0]);
    }

    #[test]
    fn locates_keys() {
        let text = "schema_version = 1\nscenario = \"kt-sweep\"\n\n[chain]\nepsilon = -1\n[optimizer]\nt_min = 3\n";
        assert_eq!(locate(text, "chain.epsilon"), Some(5));
        assert_eq!(locate(text, "optimizer.t_min"), Some(7));
        assert_eq!(locate(text, "schema_version"), Some(1));
        assert_eq!(locate(text, "optimizer.t_max"), None);
    }

    #[test]
    fn defaults_are_valid() {
        for s in Scenario::ALL {
            let c = ScenarioConfig::defaults(s);
            assert!(c.issues().is_empty(), "{s}: {:?}", c.issues());
            assert_eq!(ScenarioConfig::parse(&c.to_toml()).unwrap(), c);
        }
    }
}
