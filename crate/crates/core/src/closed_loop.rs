//! Simulated closed-loop experiments.
//!
//! Optimizers in this module see the system only through a [`FidelityOracle`]:
//! a black box that runs a switching sequence and reports a (possibly rounded
//! or sampled) transfer fidelity. They never touch Hamiltonians or analytic
//! derivatives. [`compare_algorithms`] runs all of them, plus the model-based
//! Newton method, on shared seeded trials.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{newton_optimize, NewtonOptions, OptimizationProblem, OptimizationResult, StopReason};
use crate::propagate::{ControlSystem, SwitchingSequence};
use crate::seed;

/// Default oracle budget per run.
pub const DEFAULT_BUDGET: u64 = 20_000;

/// A black-box fidelity measurement.
pub trait FidelityOracle {
    /// Run `seq` once and report the measured fidelity.
    fn measure(&mut self, seq: &SwitchingSequence) -> f64;
    /// Number of calls to [`measure`](Self::measure) so far.
    fn evaluations(&self) -> u64;
}

/// How a simulated measurement degrades the exact fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleMode {
    Exact,
    /// Rounded to `digits` decimal places.
    Quantized { digits: u32 },
    /// `k / shots` with `k ~ Binomial(shots, F)`.
    Sampled { shots: u64, seed: u64 },
}

impl OracleMode {
    /// Default discrete-gradient step: `10^ceil((1 - D) / 2)` for a `D`-digit
    /// objective. Sampled oracles use `D = floor(log10 shots)`, exact ones 1e-6.
    pub fn default_step(&self) -> f64 {
        let digits = match *self {
            OracleMode::Exact => return 1e-6,
            OracleMode::Quantized { digits } => digits as f64,
            OracleMode::Sampled { shots, .. } => (shots.max(1) as f64).log10().floor(),
        };
        10f64.powf(((1.0 - digits) / 2.0).ceil())
    }

    /// Same mode with its sampling seed replaced (no-op otherwise).
    pub fn reseeded(self, s: u64) -> Self {
        match self {
            OracleMode::Sampled { shots, .. } => OracleMode::Sampled { shots, seed: s },
            other => other,
        }
    }
}

/// One logged oracle call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub exact: f64,
    pub measured: f64,
}

/// Simulated experiment backed by a [`ControlSystem`].
pub struct SimulatedOracle {
    sys: ControlSystem,
    mode: OracleMode,
    rng: Option<ChaCha8Rng>,
    count: u64,
    log: Option<Vec<OracleRecord>>,
}

impl SimulatedOracle {
    pub fn new(sys: ControlSystem, mode: OracleMode) -> Result<Self> {
        let rng = match mode {
            OracleMode::Sampled { shots, seed: s } => {
                if shots == 0 {
                    return Err(Error::InvalidArgument("shots must be positive".into()));
                }
                Some(seed::rng(s))
            }
            OracleMode::Quantized { digits } if digits > 15 => {
                return Err(Error::InvalidArgument(format!("at most 15 digits, got {digits}")));
            }
            _ => None,
        };
        Ok(Self {
            sys,
            mode,
            rng,
            count: 0,
            log: None,
        })
    }

    /// Record every subsequent call.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn log(&self) -> Option<&[OracleRecord]> {
        self.log.as_deref()
    }
}

/// Round to `digits` decimal places (half away from zero).
pub fn quantize_fidelity(f: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    (f * scale).round() / scale
}

impl FidelityOracle for SimulatedOracle {
    fn measure(&mut self, seq: &SwitchingSequence) -> f64 {
        self.count += 1;
        let exact = self.sys.transfer_fidelity(seq).0;
        let measured = match self.mode {
            OracleMode::Exact => exact,
            OracleMode::Quantized { digits } => quantize_fidelity(exact, digits),
            OracleMode::Sampled { shots, .. } => {
                let rng = self.rng.as_mut().expect("sampled oracle owns a stream");
                let k = Binomial::new(shots, exact).expect("fidelity lies in [0, 1]").sample(rng);
                k as f64 / shots as f64
            }
        };
        if let Some(log) = self.log.as_mut() {
            log.push(OracleRecord { exact, measured });
        }
        measured
    }

    fn evaluations(&self) -> u64 {
        self.count
    }
}

/// Oracle over an arbitrary function of the durations; used to exercise the
/// optimizers on surrogate objectives.
pub struct FnOracle<F> {
    f: F,
    count: u64,
}

impl<F: FnMut(&[f64]) -> f64> FnOracle<F> {
    pub fn new(f: F) -> Self {
        Self { f, count: 0 }
    }
}

impl<F: FnMut(&[f64]) -> f64> FidelityOracle for FnOracle<F> {
    fn measure(&mut self, seq: &SwitchingSequence) -> f64 {
        self.count += 1;
        (self.f)(seq.durations())
    }

    fn evaluations(&self) -> u64 {
        self.count
    }
}

/// Budgeted error evaluations `1 - F` through an oracle.
struct Probe<'a> {
    oracle: &'a mut dyn FidelityOracle,
    template: SwitchingSequence,
    start: u64,
    budget: u64,
}

impl<'a> Probe<'a> {
    fn new(oracle: &'a mut dyn FidelityOracle, template: &SwitchingSequence, budget: u64) -> Self {
        let start = oracle.evaluations();
        Self {
            oracle,
            template: template.clone(),
            start,
            budget,
        }
    }

    fn used(&self) -> u64 {
        self.oracle.evaluations() - self.start
    }

    fn left(&self) -> u64 {
        self.budget.saturating_sub(self.used())
    }

    fn seq(&self, t: &[f64]) -> SwitchingSequence {
        self.template
            .with_durations(t.to_vec())
            .expect("optimizers only probe nonnegative durations")
    }

    /// `None` once the budget is spent.
    fn error(&mut self, t: &[f64]) -> Option<f64> {
        if self.left() == 0 {
            return None;
        }
        let s = self.seq(t);
        Some(1.0 - self.oracle.measure(&s))
    }

    fn finish(
        &self,
        t: &[f64],
        error: f64,
        problem: &OptimizationProblem,
        stop: StopReason,
        iterations: usize,
        started: Instant,
    ) -> OptimizationResult {
        let mut r = OptimizationResult::finish(self.seq(t), error, problem.error_threshold, stop, started);
        r.iterations = iterations;
        r.fidelity_evaluations = self.used();
        r
    }
}

/// Central-difference gradient of the measured error.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGradient {
    pub values: Vec<f64>,
    /// Second differences `(f+ - 2 f0 + f-) / h^2` when the centre value was
    /// supplied, else empty.
    pub curvature: Vec<f64>,
    /// Every difference was exactly zero: the step is below the noise floor.
    pub unreliable: bool,
}

/// Gradient of the measured error by central differences (2K oracle calls).
/// Where `t_k - step` would be negative the stencil is shifted up to
/// `[0, 2 step]`.
pub fn discrete_gradient(
    oracle: &mut dyn FidelityOracle,
    seq: &SwitchingSequence,
    step: f64,
) -> Result<DiscreteGradient> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut probe = Probe::new(oracle, seq, u64::MAX);
    Ok(gradient_with(&mut probe, seq.durations(), step, 0.0, None).expect("unbounded budget"))
}

fn gradient_with(
    probe: &mut Probe<'_>,
    t: &[f64],
    step: f64,
    lower: f64,
    centre_value: Option<f64>,
) -> Option<DiscreteGradient> {
    let mut values = Vec::with_capacity(t.len());
    let mut curvature = Vec::new();
    let mut all_zero = true;
    let mut x = t.to_vec();
    for k in 0..t.len() {
        let centre = t[k].max(lower + step);
        x[k] = centre + step;
        let up = probe.error(&x)?;
        x[k] = centre - step;
        let down = probe.error(&x)?;
        x[k] = t[k];
        if up != down {
            all_zero = false;
        }
        values.push((up - down) / (2.0 * step));
        if let Some(f0) = centre_value.filter(|_| centre == t[k]) {
            curvature.push((up - 2.0 * f0 + down) / (step * step));
        } else if centre_value.is_some() {
            curvature.push(f64::NAN);
        }
    }
    Some(DiscreteGradient {
        values,
        curvature,
        unreliable: all_zero,
    })
}

/// Settings for [`quasi_newton_closed_loop`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiNewtonOptions {
    /// Finite-difference step; `None` picks [`OracleMode::default_step`]
    /// when known, else 1e-4.
    pub step: Option<f64>,
    pub budget: u64,
    pub max_iterations: usize,
    /// Initial per-coordinate step cap; doubled after full steps and halved
    /// after backtracking, within `[1e-3, max_step]`.
    pub initial_radius: f64,
    pub max_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        Self {
            step: None,
            budget: DEFAULT_BUDGET,
            max_iterations: 2000,
            initial_radius: 0.5,
            max_step: 2.0,
            armijo: 1e-4,
            max_backtracks: 20,
        }
    }
}

/// Projected BFGS on measured errors with discrete gradients.
///
/// The inverse-Hessian estimate starts from the diagonal second differences
/// that the central-difference stencil yields for free, and is updated from
/// successive gradient differences (skipped when the curvature condition
/// fails). Coordinates on the lower bound whose gradient points outward are
/// frozen; when the total-time cap is active the step keeps the total fixed.
pub fn quasi_newton_closed_loop(
    problem: &OptimizationProblem,
    oracle: &mut dyn FidelityOracle,
    t0: &SwitchingSequence,
    opts: &QuasiNewtonOptions,
) -> Result<OptimizationResult> {
    check_start(problem, t0)?;
    let step = opts.step.unwrap_or(1e-4);
    let started = Instant::now();
    let mut probe = Probe::new(oracle, t0, opts.budget);
    let k = t0.len();
    let mut t = t0.durations().to_vec();
    let Some(mut err) = probe.error(&t) else {
        return Ok(probe.finish(&t, 1.0, problem, StopReason::Budget, 0, started));
    };
    let mut hinv = DMatrix::<f64>::identity(k, k);
    let mut fresh = true;
    let mut radius = opts.initial_radius.min(opts.max_step);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iterations = 0;
    let stop = loop {
        if err <= problem.error_threshold {
            break StopReason::Threshold;
        }
        if iterations >= opts.max_iterations {
            break StopReason::IterationCap;
        }
        let Some(grad) = gradient_with(&mut probe, &t, step, problem.t_min, Some(err)) else {
            break StopReason::Budget;
        };
        if grad.unreliable {
            break StopReason::Stagnation;
        }
        let g = grad.values;
        if fresh {
            hinv = diagonal_inverse(&grad.curvature);
            prev = None;
        }
        if let Some((tp, gp)) = prev.take() {
            let s = DVector::from_iterator(k, t.iter().zip(&tp).map(|(a, b)| a - b));
            let y = DVector::from_iterator(k, g.iter().zip(&gp).map(|(a, b)| a - b));
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                bfgs_update(&mut hinv, &s, &y, sy);
            }
        }
        iterations += 1;

        let free: Vec<usize> = (0..k).filter(|&i| !(t[i] <= problem.t_min && g[i] > 0.0)).collect();
        let sum_active = t.iter().sum::<f64>() >= problem.t_max * (1.0 - 1e-12);
        let mut accepted = None;
        for model in [Some(&hinv), None] {
            let d = projected_direction(model, &g, &free, sum_active, radius);
            match line_search(&mut probe, problem, &t, err, &g, &d, opts) {
                Search::Accepted(next, e, gamma) => {
                    radius = if gamma == 1.0 {
                        (2.0 * radius).min(opts.max_step)
                    } else {
                        (0.5 * radius).max(1e-3)
                    };
                    accepted = Some((next, e));
                    break;
                }
                Search::Budget => break,
                Search::Failed => {}
            }
        }
        match accepted {
            Some((next, e)) => {
                prev = Some((std::mem::replace(&mut t, next), g));
                err = e;
                fresh = false;
                if radius < step {
                    // steps below the stencil width teach the secant model only noise
                    fresh = true;
                    radius = opts.initial_radius.min(opts.max_step);
                }
            }
            None if probe.left() == 0 => break StopReason::Budget,
            // stale curvature: rebuild it from the next stencil
            None if !fresh => fresh = true,
            None => break StopReason::Stagnation,
        }
    };
    Ok(probe.finish(&t, err, problem, stop, iterations, started))
}

/// `diag(1 / |c_i|)` with magnitudes floored at 1e-3 of the largest; unusable
/// entries fall back to the largest magnitude.
fn diagonal_inverse(curvature: &[f64]) -> DMatrix<f64> {
    let max = curvature
        .iter()
        .filter(|c| c.is_finite())
        .fold(0.0f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return DMatrix::identity(curvature.len(), curvature.len());
    }
    let d = DVector::from_iterator(
        curvature.len(),
        curvature.iter().map(|&c| {
            let c = if c.is_finite() { c.abs() } else { max };
            1.0 / c.max(1e-3 * max)
        }),
    );
    DMatrix::from_diagonal(&d)
}

fn bfgs_update(hinv: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, sy: f64) {
    let rho = 1.0 / sy;
    let hy = &*hinv * y;
    let yhy = y.dot(&hy);
    // H + rho^2 (s'y + y'Hy) s s' - rho (H y s' + s y'H)
    *hinv += s * s.transpose() * (rho * rho * (sy + yhy)) - (&hy * s.transpose() + s * hy.transpose()) * rho;
}

/// `-B g` on the free coordinates (steepest descent when `model` is `None`),
/// restricted to zero total change when `hold_sum`, capped entrywise.
fn projected_direction(
    model: Option<&DMatrix<f64>>,
    g: &[f64],
    free: &[usize],
    hold_sum: bool,
    max_step: f64,
) -> Vec<f64> {
    let n = free.len();
    let gf = DVector::from_iterator(n, free.iter().map(|&i| g[i]));
    let b = match model {
        Some(h) => DMatrix::from_fn(n, n, |r, c| h[(free[r], free[c])]),
        None => DMatrix::identity(n, n),
    };
    let mut d = -(&b * &gf);
    if hold_sum && d.sum() > 0.0 {
        let w = b.column_sum();
        let ws = w.sum();
        if ws > 0.0 {
            d -= w * (d.sum() / ws);
        }
    }
    let m = d.amax();
    if m > max_step {
        d *= max_step / m;
    }
    let mut full = vec![0.0; g.len()];
    for (idx, &i) in free.iter().enumerate() {
        full[i] = d[idx];
    }
    full
}

enum Search {
    Accepted(Vec<f64>, f64, f64),
    Failed,
    Budget,
}

fn line_search(
    probe: &mut Probe<'_>,
    problem: &OptimizationProblem,
    t: &[f64],
    err: f64,
    g: &[f64],
    d: &[f64],
    opts: &QuasiNewtonOptions,
) -> Search {
    let mut gamma = 1.0;
    for _ in 0..=opts.max_backtracks {
        let mut cand: Vec<f64> = t.iter().zip(d).map(|(a, b)| a + gamma * b).collect();
        problem.project(&mut cand);
        let slope: f64 = cand.iter().zip(t).zip(g).map(|((c, a), gi)| (c - a) * gi).sum();
        if cand.as_slice() == t {
            return Search::Failed;
        }
        let Some(e) = probe.error(&cand) else {
            return Search::Budget;
        };
        let ok = if slope < 0.0 { e <= err + opts.armijo * slope } else { e < err };
        if ok {
            return Search::Accepted(cand, e, gamma);
        }
        gamma *= 0.5;
    }
    Search::Failed
}

fn check_start(problem: &OptimizationProblem, t0: &SwitchingSequence) -> Result<()> {
    problem.validate()?;
    if t0.len() > problem.k_max || !problem.is_feasible(t0.durations()) {
        return Err(Error::Infeasible(format!(
            "initial sequence (K = {}, T = {}) violates K <= {}, t_k >= {}, T <= {}",
            t0.len(),
            t0.total_time(),
            problem.k_max,
            problem.t_min,
            problem.t_max
        )));
    }
    Ok(())
}

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Initial edge length relative to the mean duration of `t0`.
    pub initial_scale: f64,
    /// Stop once every vertex lies this close to the best one.
    pub x_tolerance: f64,
    pub budget: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_scale: 0.2,
            x_tolerance: 1e-9,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Nelder-Mead simplex search on measured errors; every trial point is
/// projected onto the feasible set.
pub fn nelder_mead(
    problem: &OptimizationProblem,
    oracle: &mut dyn FidelityOracle,
    t0: &SwitchingSequence,
    opts: &SimplexOptions,
) -> Result<OptimizationResult> {
    check_start(problem, t0)?;
    let started = Instant::now();
    let mut probe = Probe::new(oracle, t0, opts.budget);
    let k = t0.len();
    let x0 = t0.durations().to_vec();
    let edge = opts.initial_scale * (t0.total_time() / k as f64).max(1e-3);
    let mut iterations = 0;

    let mut pts = vec![x0.clone()];
    for i in 0..k {
        let mut v = x0.clone();
        v[i] += edge;
        problem.project(&mut v);
        if v == x0 {
            v[i] = (x0[i] - edge).max(problem.t_min);
        }
        pts.push(v);
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    for p in pts {
        match probe.error(&p) {
            Some(e) => simplex.push((p, e)),
            None => break,
        }
    }
    let point = |c: &[f64], toward: &[f64], coef: f64| -> Vec<f64> {
        let mut v: Vec<f64> = c.iter().zip(toward).map(|(a, b)| a + coef * (b - a)).collect();
        problem.project(&mut v);
        v
    };

    let stop = 'outer: loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex.len() < k + 1 {
            break StopReason::Budget;
        }
        if simplex[0].1 <= problem.error_threshold {
            break StopReason::Threshold;
        }
        let best = simplex[0].0.clone();
        let spread = simplex
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= opts.x_tolerance {
            break StopReason::SmallStep;
        }
        iterations += 1;
        let mut centroid = vec![0.0; k];
        for (v, _) in &simplex[..k] {
            centroid.iter_mut().zip(v).for_each(|(c, x)| *c += x / k as f64);
        }
        let (worst, f_worst) = simplex[k].clone();
        let f_best = simplex[0].1;
        let f_second = simplex[k - 1].1;

        let xr = point(&centroid, &worst, -opts.reflection);
        let Some(fr) = probe.error(&xr) else { break StopReason::Budget };
        if fr < f_best {
            let xe = point(&centroid, &xr, opts.expansion);
            let Some(fe) = probe.error(&xe) else { break StopReason::Budget };
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < f_second {
            simplex[k] = (xr, fr);
            continue;
        }
        let (xc, fc_ok) = if fr < f_worst {
            let xc = point(&centroid, &xr, opts.contraction);
            let Some(fc) = probe.error(&xc) else { break StopReason::Budget };
            ((xc, fc), fc <= fr)
        } else {
            let xc = point(&centroid, &worst, opts.contraction);
            let Some(fc) = probe.error(&xc) else { break StopReason::Budget };
            ((xc, fc), fc < f_worst)
        };
        if fc_ok {
            simplex[k] = xc;
            continue;
        }
        for vertex in simplex.iter_mut().skip(1) {
            let v = point(&best, &vertex.0, opts.shrink);
            let Some(f) = probe.error(&v) else { break 'outer StopReason::Budget };
            *vertex = (v, f);
        }
    };
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (t, e) = simplex.into_iter().next().unwrap_or((x0, 1.0));
    Ok(probe.finish(&t, e, problem, stop, iterations, started))
}

/// Settings for [`genetic_optimize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneticOptions {
    pub population_size: usize,
    pub tournament_size: usize,
    /// BLX-alpha blend parameter.
    pub blend_alpha: f64,
    /// Initial mutation standard deviation (time units).
    pub mutation_sigma: f64,
    /// Per-generation factor applied to the mutation width.
    pub mutation_decay: f64,
    /// Probability that a gene is mutated.
    pub mutation_rate: f64,
    pub elitism: usize,
    pub budget: u64,
}

impl Default for GeneticOptions {
    fn default() -> Self {
        Self {
            population_size: 50,
            tournament_size: 3,
            blend_alpha: 0.5,
            mutation_sigma: 0.5,
            mutation_decay: 0.97,
            mutation_rate: 0.1,
            elitism: 1,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Generational genetic algorithm. The initial population is `t0` plus
/// random feasible sequences drawn from `seed`.
pub fn genetic_optimize(
    problem: &OptimizationProblem,
    oracle: &mut dyn FidelityOracle,
    t0: &SwitchingSequence,
    opts: &GeneticOptions,
    seed: u64,
) -> Result<OptimizationResult> {
    check_start(problem, t0)?;
    let mut rng = seed::rng(seed);
    let mut population = vec![t0.durations().to_vec()];
    let k = t0.len();
    let sub = OptimizationProblem {
        k_max: k,
        ..problem.clone()
    };
    while population.len() < opts.population_size {
        population.push(sub.random_initial(&mut rng).durations().to_vec());
    }
    genetic_from_population(problem, oracle, t0, population, opts, &mut rng)
}

/// [`genetic_optimize`] from an explicit initial population.
pub fn genetic_from_population(
    problem: &OptimizationProblem,
    oracle: &mut dyn FidelityOracle,
    template: &SwitchingSequence,
    population: Vec<Vec<f64>>,
    opts: &GeneticOptions,
    rng: &mut ChaCha8Rng,
) -> Result<OptimizationResult> {
    check_start(problem, template)?;
    if opts.population_size < 2 || population.len() != opts.population_size {
        return Err(Error::InvalidArgument(format!(
            "population must hold population_size >= 2 individuals (got {} for size {})",
            population.len(),
            opts.population_size
        )));
    }
    if population.iter().any(|p| p.len() != template.len() || !problem.is_feasible(p)) {
        return Err(Error::Infeasible("initial population must be feasible".into()));
    }
    if opts.tournament_size < 1 || opts.elitism >= opts.population_size {
        return Err(Error::InvalidArgument(
            "tournament_size must be >= 1 and elitism < population_size".into(),
        ));
    }
    let started = Instant::now();
    let mut probe = Probe::new(oracle, template, opts.budget);
    let mut scored: Vec<(Vec<f64>, f64)> = Vec::with_capacity(population.len());
    for p in population {
        match probe.error(&p) {
            Some(e) => scored.push((p, e)),
            None => break,
        }
    }
    let mut sigma = opts.mutation_sigma;
    let mut generations = 0;
    let stop = loop {
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        if scored.len() < opts.population_size {
            break StopReason::Budget;
        }
        if scored[0].1 <= problem.error_threshold {
            break StopReason::Threshold;
        }
        generations += 1;
        let mut next: Vec<(Vec<f64>, f64)> = scored[..opts.elitism].to_vec();
        let gauss = Normal::new(0.0, sigma.max(0.0)).expect("finite width");
        let mut exhausted = false;
        while next.len() < opts.population_size {
            let a = tournament(&scored, opts.tournament_size, rng);
            let b = tournament(&scored, opts.tournament_size, rng);
            let mut child: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let (lo, hi) = (x.min(y), x.max(y));
                    let pad = opts.blend_alpha * (hi - lo);
                    if hi - lo > 0.0 || pad > 0.0 {
                        rng.random_range(lo - pad..=hi + pad)
                    } else {
                        lo
                    }
                })
                .collect();
            if sigma > 0.0 {
                for v in child.iter_mut() {
                    if rng.random::<f64>() < opts.mutation_rate {
                        *v += gauss.sample(rng);
                    }
                }
            }
            problem.project(&mut child);
            match probe.error(&child) {
                Some(e) => next.push((child, e)),
                None => {
                    exhausted = true;
                    break;
                }
            }
        }
        if exhausted {
            // keep the best individual seen, including the partial generation
            scored.extend(next);
            scored.sort_by(|a, b| a.1.total_cmp(&b.1));
            break StopReason::Budget;
        }
        scored = next;
        sigma *= opts.mutation_decay;
    };
    let (t, e) = scored.swap_remove(0);
    Ok(probe.finish(&t, e, problem, stop, generations, started))
}

fn tournament<'p>(scored: &'p [(Vec<f64>, f64)], size: usize, rng: &mut ChaCha8Rng) -> &'p [f64] {
    let idx: Vec<usize> = (0..scored.len()).collect();
    let winner = (0..size)
        .map(|_| *idx.choose(rng).expect("nonempty population"))
        .min_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1).then(a.cmp(&b)))
        .expect("size >= 1");
    &scored[winner].0
}

/// Algorithms compared by [`compare_algorithms`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Newton iteration with analytic derivatives on the model.
    ModelNewton,
    /// [`quasi_newton_closed_loop`].
    QuasiNewton,
    /// [`nelder_mead`].
    Simplex,
    /// [`genetic_optimize`].
    Genetic,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::ModelNewton,
        Algorithm::QuasiNewton,
        Algorithm::Simplex,
        Algorithm::Genetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ModelNewton => "model_newton",
            Algorithm::QuasiNewton => "quasi_newton",
            Algorithm::Simplex => "simplex",
            Algorithm::Genetic => "genetic",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::InvalidArgument(format!("unknown algorithm `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Settings shared by every trial of [`compare_algorithms`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub algorithms: Vec<Algorithm>,
    pub quasi_newton: QuasiNewtonOptions,
    pub simplex: SimplexOptions,
    pub genetic: GeneticOptions,
    pub newton: NewtonOptions,
    /// Record wall times; off gives bit-identical reports across reruns.
    pub timing: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            quasi_newton: QuasiNewtonOptions::default(),
            simplex: SimplexOptions::default(),
            genetic: GeneticOptions::default(),
            newton: NewtonOptions::default(),
            timing: true,
        }
    }
}

/// One algorithm run within a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    /// Final measured error at or below the threshold.
    pub success: bool,
    /// Error reported by the oracle for the returned sequence.
    pub measured_error: f64,
    /// Model error of the returned sequence (not an oracle call).
    pub exact_error: f64,
    pub evaluations: u64,
    pub wall_time: Option<f64>,
    pub total_time: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub durations: Vec<f64>,
}

/// Aggregate statistics of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRow {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub success_pct: f64,
    pub mean_evals: f64,
    pub mean_exe_s: Option<f64>,
    /// Mean total time over all trials, successful or not.
    pub mean_t: f64,
    /// Shortest total time among successful trials.
    pub min_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub oracle: OracleMode,
    pub problem: OptimizationProblem,
    pub seed: u64,
    pub rows: Vec<AlgorithmRow>,
    pub trials: Vec<TrialRecord>,
}

/// Header of [`BenchmarkReport::to_csv`].
pub const REPORT_CSV_HEADER: &str = "algorithm,success_pct,mean_evals,mean_exe_s,mean_T,min_T";

impl BenchmarkReport {
    pub fn row(&self, a: Algorithm) -> Option<&AlgorithmRow> {
        self.rows.iter().find(|r| r.algorithm == a)
    }

    /// One line per algorithm; absent values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.algorithm,
                r.success_pct,
                r.mean_evals,
                opt(r.mean_exe_s),
                r.mean_t,
                opt(r.min_t)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// Run each algorithm on `trials` seeded instances of `problem`.
///
/// Trial `i` uses `s = seed::derive(seed, i)`: its initial sequence comes
/// from stream `derive(s, 0)`, the oracle's sampling stream from
/// `derive(s, 1)` and the genetic algorithm's stream from `derive(s, 2)`.
/// Every algorithm in a trial starts from the same sequence with a fresh
/// oracle. Success is judged on the final measured error.
pub fn compare_algorithms(
    problem: &OptimizationProblem,
    sys: &ControlSystem,
    oracle: OracleMode,
    trials: usize,
    seed: u64,
    opts: &CompareOptions,
) -> Result<BenchmarkReport> {
    if trials < 1 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    problem.validate()?;
    let sys = problem.system(sys)?;
    SimulatedOracle::new(sys.clone(), oracle)?;
    let mut qn = opts.quasi_newton;
    qn.step = qn.step.or(Some(oracle.default_step()));

    let per_trial: Vec<Vec<TrialRecord>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(seed, i as u64);
            let t0 = problem.random_initial(&mut seed::rng(seed::derive(s, 0)));
            let mode = oracle.reseeded(seed::derive(s, 1));
            opts.algorithms
                .iter()
                .map(|&alg| {
                    let mut o = SimulatedOracle::new(sys.clone(), mode)?;
                    let r = match alg {
                        Algorithm::ModelNewton => newton_optimize(problem, &sys, &t0, &opts.newton)?,
                        Algorithm::QuasiNewton => quasi_newton_closed_loop(problem, &mut o, &t0, &qn)?,
                        Algorithm::Simplex => nelder_mead(problem, &mut o, &t0, &opts.simplex)?,
                        Algorithm::Genetic => {
                            genetic_optimize(problem, &mut o, &t0, &opts.genetic, seed::derive(s, 2))?
                        }
                    };
                    let measured_error = match alg {
                        // the model method is judged by the same instrument
                        Algorithm::ModelNewton => 1.0 - o.measure(&r.sequence),
                        _ => r.error,
                    };
                    Ok(TrialRecord {
                        algorithm: alg,
                        trial: i,
                        seed: s,
                        success: measured_error <= problem.error_threshold,
                        measured_error,
                        exact_error: sys.transfer_error(&r.sequence),
                        evaluations: r.fidelity_evaluations,
                        wall_time: opts.timing.then_some(r.wall_time),
                        total_time: r.total_time,
                        iterations: r.iterations,
                        stop_reason: r.stop_reason,
                        durations: r.sequence.durations().to_vec(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    let rows = opts
        .algorithms
        .iter()
        .map(|&a| summarize(a, &records))
        .collect();
    Ok(BenchmarkReport {
        oracle,
        problem: problem.clone(),
        seed,
        rows,
        trials: records,
    })
}

fn summarize(a: Algorithm, records: &[TrialRecord]) -> AlgorithmRow {
    let runs: Vec<&TrialRecord> = records.iter().filter(|r| r.algorithm == a).collect();
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / n;
    let successes = runs.iter().filter(|r| r.success).count();
    let mean_exe_s = runs
        .iter()
        .map(|r| r.wall_time)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    AlgorithmRow {
        algorithm: a,
        trials: runs.len(),
        success_pct: 100.0 * successes as f64 / n,
        mean_evals: mean(&|r| r.evaluations as f64),
        mean_exe_s,
        mean_t: mean(&|r| r.total_time),
        min_t: runs
            .iter()
            .filter(|r| r.success)
            .map(|r| r.total_time)
            .min_by(f64::total_cmp),
    }
}
