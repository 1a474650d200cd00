//! Model-based switching-time optimization: projected Newton iteration with
//! backtracking, multistart, and switching-time quantization.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivatives::error_gradient_hessian;
use crate::error::{Error, Result};
use crate::propagate::{ControlSystem, StartPhase, SwitchingSequence};
use crate::seed;

fn default_source() -> usize {
    1
}

fn default_threshold() -> f64 {
    1e-4
}

/// Constraints and targets for one optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    /// 1-based source site.
    #[serde(default = "default_source")]
    pub source: usize,
    /// 1-based target site; `None` means the last site.
    #[serde(default)]
    pub target: Option<usize>,
    /// Number of segments K.
    pub k_max: usize,
    pub t_max: f64,
    #[serde(default)]
    pub t_min: f64,
    #[serde(default = "default_threshold")]
    pub error_threshold: f64,
    /// Round switching times to this many decimals.
    #[serde(default)]
    pub time_digits: Option<u32>,
    /// Total time of random initial sequences; `None` means `t_max`.
    #[serde(default)]
    pub initial_time: Option<f64>,
    #[serde(default)]
    pub start_phase: StartPhase,
}

impl OptimizationProblem {
    pub fn new(k_max: usize, t_max: f64) -> Self {
        Self {
            source: 1,
            target: None,
            k_max,
            t_max,
            t_min: 0.0,
            error_threshold: 1e-4,
            time_digits: None,
            initial_time: None,
            start_phase: StartPhase::default(),
        }
    }

    pub fn with_initial_time(mut self, t0: f64) -> Self {
        self.initial_time = Some(t0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k_max < 1 {
            return bad("k_max must be at least 1".into());
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if !(self.t_min >= 0.0) {
            return bad(format!("t_min must be nonnegative, got {}", self.t_min));
        }
        if self.k_max as f64 * self.t_min > self.t_max {
            return bad(format!(
                "k_max * t_min = {} exceeds t_max = {}",
                self.k_max as f64 * self.t_min,
                self.t_max
            ));
        }
        if !(self.error_threshold > 0.0 && self.error_threshold < 1.0) {
            return bad(format!(
                "error_threshold must lie in (0, 1), got {}",
                self.error_threshold
            ));
        }
        if let Some(t0) = self.initial_time {
            if !(t0 > 0.0) || t0 > self.t_max {
                return bad(format!("initial_time must lie in (0, t_max], got {t0}"));
            }
        }
        Ok(())
    }

    /// System retargeted to this problem's endpoints.
    pub fn system(&self, sys: &ControlSystem) -> Result<ControlSystem> {
        let target = self.target.unwrap_or(sys.dim());
        sys.with_endpoints(self.source, target)
    }

    pub fn is_feasible(&self, durations: &[f64]) -> bool {
        durations.iter().all(|&t| t >= self.t_min) && durations.iter().sum::<f64>() <= self.t_max
    }

    /// Euclidean projection onto `{t_k >= t_min, sum t_k <= t_max}`.
    pub fn project(&self, durations: &mut [f64]) {
        project_capped(durations, self.t_min, self.t_max);
    }

    /// Random feasible sequence: uniform draws rescaled to the initial time.
    pub fn random_initial<R: Rng>(&self, rng: &mut R) -> SwitchingSequence {
        let total = self.initial_time.unwrap_or(self.t_max);
        let mut d: Vec<f64> = (0..self.k_max).map(|_| rng.random::<f64>()).collect();
        let s: f64 = d.iter().sum();
        d.iter_mut().for_each(|t| *t *= total / s);
        self.project(&mut d);
        SwitchingSequence::new(d, self.start_phase).expect("projected durations are nonnegative")
    }
}

fn project_capped(t: &mut [f64], lower: f64, cap: f64) {
    t.iter_mut().for_each(|v| {
        if !(*v >= lower) {
            *v = lower;
        }
    });
    let sum: f64 = t.iter().sum();
    if sum <= cap {
        return;
    }
    // find tau with sum(max(t - tau, lower)) = cap
    let mut sorted: Vec<f64> = t.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = sorted.len();
    let mut prefix = 0.0;
    let mut tau = 0.0;
    for j in 1..=k {
        prefix += sorted[j - 1];
        let candidate = (prefix + (k - j) as f64 * lower - cap) / j as f64;
        let above = sorted[j - 1] - candidate >= lower;
        let below = j == k || sorted[j] - candidate <= lower;
        if above && below {
            tau = candidate;
            break;
        }
    }
    t.iter_mut().for_each(|v| *v = (*v - tau).max(lower));
    // rounding can leave the sum a few ulps above the cap
    for _ in 0..4 {
        let sum: f64 = t.iter().sum();
        if sum <= cap {
            break;
        }
        let (imax, _) = t
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        t[imax] = (t[imax] - (sum - cap) * 2.0).max(lower);
    }
}

/// Step-size rule: Armijo backtracking from `initial`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPolicy {
    pub initial: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for GammaPolicy {
    fn default() -> Self {
        Self {
            initial: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub gamma: GammaPolicy,
    pub max_iterations: usize,
    /// Stop when an accepted step moves the times by less than this (2-norm).
    pub step_tolerance: f64,
    /// Largest change of any single switching time per iteration.
    pub max_step: f64,
    pub regularization: Regularization,
}

/// How an indefinite Hessian is turned into a descent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// `H + mu I`, `mu` doubling until positive definite.
    Levenberg,
    /// Eigenvalues replaced by their magnitude, floored relative to the largest.
    #[default]
    AbsoluteEigen,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            gamma: GammaPolicy::default(),
            max_iterations: 500,
            step_tolerance: 1e-10,
            max_step: 2.0,
            regularization: Regularization::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    SmallStep,
    Stagnation,
    IterationCap,
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub sequence: SwitchingSequence,
    pub error: f64,
    pub fidelity: f64,
    pub total_time: f64,
    pub iterations: usize,
    /// Objective evaluations, each derivative evaluation counting once.
    pub fidelity_evaluations: u64,
    pub derivative_evaluations: u64,
    /// Iterations where the regularized Newton step failed and a gradient
    /// step was taken instead.
    pub gradient_fallbacks: usize,
    pub wall_time: f64,
    /// Error at or below the threshold.
    pub converged: bool,
    pub stop_reason: StopReason,
    pub seed: Option<u64>,
}

impl OptimizationResult {
    pub(crate) fn finish(
        sequence: SwitchingSequence,
        error: f64,
        threshold: f64,
        stop_reason: StopReason,
        started: Instant,
    ) -> Self {
        let total_time = sequence.total_time();
        Self {
            sequence,
            error,
            fidelity: 1.0 - error,
            total_time,
            iterations: 0,
            fidelity_evaluations: 0,
            derivative_evaluations: 0,
            gradient_fallbacks: 0,
            wall_time: started.elapsed().as_secs_f64(),
            converged: error <= threshold,
            stop_reason,
            seed: None,
        }
    }
}

/// Positive-definite stand-in for an indefinite Hessian.
pub(crate) enum CurvatureModel {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Spectral {
        vectors: DMatrix<f64>,
        inv_values: DVector<f64>,
    },
}

impl CurvatureModel {
    pub(crate) fn build(h: &DMatrix<f64>, reg: Regularization) -> Option<Self> {
        if h.nrows() == 0 {
            return None;
        }
        match reg {
            Regularization::Levenberg => {
                // (H + mu I), mu doubling from zero until Cholesky succeeds
                let k = h.nrows();
                let scale = h.diagonal().amax().max(1e-12);
                let mut mu = 0.0;
                for _ in 0..80 {
                    if let Some(ch) = Cholesky::new(h + DMatrix::identity(k, k) * mu) {
                        return Some(CurvatureModel::Cholesky(ch));
                    }
                    mu = if mu == 0.0 { 1e-8 * scale } else { mu * 2.0 };
                }
                None
            }
            Regularization::AbsoluteEigen => {
                let eig = nalgebra::SymmetricEigen::new(h.clone());
                let floor = 1e-8 * eig.eigenvalues.amax().max(1e-12);
                let inv_values = eig.eigenvalues.map(|l| 1.0 / l.abs().max(floor));
                Some(CurvatureModel::Spectral {
                    vectors: eig.eigenvectors,
                    inv_values,
                })
            }
        }
    }

    pub(crate) fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            CurvatureModel::Cholesky(ch) => ch.solve(v),
            CurvatureModel::Spectral {
                vectors,
                inv_values,
            } => {
                let c = vectors.transpose() * v;
                vectors * c.component_mul(inv_values)
            }
        }
    }

    /// Model minimizer `-B^-1 g`; with `hold_sum` the step is restricted to
    /// `sum d = 0` whenever it would otherwise lengthen the sequence.
    pub(crate) fn direction(&self, g: &DVector<f64>, hold_sum: bool) -> Option<DVector<f64>> {
        let u = self.solve(g);
        let mut d = -&u;
        if hold_sum && d.sum() > 0.0 {
            let w = self.solve(&DVector::from_element(g.len(), 1.0));
            let nu = -u.sum() / w.sum();
            d = -u - w * nu;
        }
        d.iter().all(|v| v.is_finite()).then_some(d)
    }
}

fn cap_step(d: &mut DVector<f64>, max_step: f64) {
    let m = d.amax();
    if m > max_step {
        *d *= max_step / m;
    }
}

/// Newton iteration `t <- P(t - gamma (H + mu I)^-1 grad E)` from `t0`.
///
/// Coordinates resting on the lower bound with a gradient pushing further
/// out are frozen for the step. Every accepted step strictly decreases the
/// error (Armijo with backtracking on gamma); if no Newton step is accepted
/// a projected gradient step is tried before declaring stagnation.
pub fn newton_optimize(
    problem: &OptimizationProblem,
    sys: &ControlSystem,
    t0: &SwitchingSequence,
    opts: &NewtonOptions,
) -> Result<OptimizationResult> {
    problem.validate()?;
    let sys = problem.system(sys)?;
    if t0.len() > problem.k_max {
        return Err(Error::Infeasible(format!(
            "{} segments exceed k_max = {}",
            t0.len(),
            problem.k_max
        )));
    }
    if !problem.is_feasible(t0.durations()) {
        return Err(Error::Infeasible(format!(
            "durations must satisfy t_k >= {} and sum <= {} (sum = {})",
            problem.t_min,
            problem.t_max,
            t0.total_time()
        )));
    }
    let started = Instant::now();
    let mut target = problem.error_threshold;
    let mut seq = t0.clone();
    let mut evals = 0u64;
    let mut derivs = 0u64;
    let mut fallbacks = 0usize;
    let mut iterations = 0usize;
    let mut stop = StopReason::IterationCap;
    let k = seq.len();

    let finish = |seq: SwitchingSequence, error: f64, stop, iterations, evals, derivs, fallbacks| {
        let mut r = OptimizationResult::finish(seq, error, problem.error_threshold, stop, started);
        r.iterations = iterations;
        r.fidelity_evaluations = evals;
        r.derivative_evaluations = derivs;
        r.gradient_fallbacks = fallbacks;
        r
    };

    loop {
        let (err, grad, hess) = error_gradient_hessian(&sys, &seq);
        evals += 1;
        derivs += 1;
        if err <= target {
            match problem.time_digits {
                None => {
                    stop = StopReason::Threshold;
                    break;
                }
                Some(d) => {
                    let (q, qerr) = quantize_times(&sys, &seq, d);
                    evals += 1;
                    if qerr <= problem.error_threshold && problem.is_feasible(q.durations()) {
                        return Ok(finish(q, qerr, StopReason::Threshold, iterations, evals, derivs, fallbacks));
                    }
                    target /= 10.0;
                    if target < 1e-14 {
                        stop = StopReason::Stagnation;
                        break;
                    }
                    continue;
                }
            }
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        let t = seq.durations().to_vec();
        let free: Vec<usize> = (0..k)
            .filter(|&i| !(t[i] <= problem.t_min && grad[i] > 0.0))
            .collect();
        let g = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let h = DMatrix::from_fn(free.len(), free.len(), |r, c| hess[(free[r], free[c])]);

        let full = |dir: &DVector<f64>| {
            let mut d = vec![0.0; k];
            for (idx, &i) in free.iter().enumerate() {
                d[i] = dir[idx];
            }
            d
        };

        let mut accepted = None;
        let sum_active = t.iter().sum::<f64>() >= problem.t_max * (1.0 - 1e-12);
        let newton_dir = CurvatureModel::build(&h, opts.regularization)
            .and_then(|m| m.direction(&g, sum_active))
            .map(|mut d| {
            cap_step(&mut d, opts.max_step);
            d
        });
        let mut gradient_dir = -g.clone();
        if sum_active && gradient_dir.sum() > 0.0 {
            let mean = gradient_dir.mean();
            gradient_dir.add_scalar_mut(-mean);
        }
        cap_step(&mut gradient_dir, opts.max_step);
        let candidates = newton_dir.into_iter().map(|d| (d, false)).chain(std::iter::once((gradient_dir, true)));
        for (dir, is_fallback) in candidates {
            let d = full(&dir);
            if let Some(step) = backtrack(&sys, problem, &seq, &t, err, &grad, &d, &opts.gamma, &mut evals) {
                if is_fallback {
                    fallbacks += 1;
                }
                accepted = Some(step);
                break;
            }
        }
        match accepted {
            None => {
                stop = StopReason::Stagnation;
                break;
            }
            Some((next, step_norm)) => {
                seq = next;
                if step_norm <= opts.step_tolerance {
                    let e = sys.transfer_error(&seq);
                    evals += 1;
                    let reason = if e <= problem.error_threshold {
                        StopReason::Threshold
                    } else {
                        StopReason::SmallStep
                    };
                    return Ok(finish(seq, e, reason, iterations, evals, derivs, fallbacks));
                }
            }
        }
    }
    let e = sys.transfer_error(&seq);
    evals += 1;
    Ok(finish(seq, e, stop, iterations, evals, derivs, fallbacks))
}

/// Armijo backtracking along `d` with projection. Returns the accepted
/// sequence and the 2-norm of the actual step.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    sys: &ControlSystem,
    problem: &OptimizationProblem,
    seq: &SwitchingSequence,
    t: &[f64],
    err: f64,
    grad: &[f64],
    d: &[f64],
    policy: &GammaPolicy,
    evals: &mut u64,
) -> Option<(SwitchingSequence, f64)> {
    let mut gamma = policy.initial;
    for _ in 0..=policy.max_backtracks {
        let mut cand: Vec<f64> = t.iter().zip(d).map(|(a, b)| a + gamma * b).collect();
        problem.project(&mut cand);
        let slope: f64 = cand.iter().zip(t).zip(grad).map(|((c, a), g)| (c - a) * g).sum();
        let candidate = seq.with_durations(cand).ok()?;
        let e = sys.transfer_error(&candidate);
        *evals += 1;
        let ok = if slope < 0.0 {
            e <= err + policy.armijo * slope
        } else {
            e < err
        };
        if ok {
            let norm = candidate
                .durations()
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            return Some((candidate, norm));
        }
        gamma *= policy.shrink;
    }
    None
}

/// Run [`newton_optimize`] from `n_starts` random initial sequences and
/// return every run in start order. Start `i` draws its initial sequence
/// from `seed::derive(seed, i)`.
pub fn multistart_runs(
    problem: &OptimizationProblem,
    sys: &ControlSystem,
    n_starts: usize,
    seed: u64,
    opts: &NewtonOptions,
) -> Result<Vec<OptimizationResult>> {
    if n_starts < 1 {
        return Err(Error::InvalidArgument("n_starts must be at least 1".into()));
    }
    problem.validate()?;
    (0..n_starts as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(seed, i);
            let t0 = problem.random_initial(&mut seed::rng(s));
            let mut r = newton_optimize(problem, sys, &t0, opts)?;
            r.seed = Some(s);
            Ok(r)
        })
        .collect()
}

/// Lowest-error run of [`multistart_runs`] (earliest start on ties).
pub fn multistart(
    problem: &OptimizationProblem,
    sys: &ControlSystem,
    n_starts: usize,
    seed: u64,
    opts: &NewtonOptions,
) -> Result<OptimizationResult> {
    let runs = multistart_runs(problem, sys, n_starts, seed, opts)?;
    Ok(best_of(runs))
}

pub(crate) fn best_of(runs: Vec<OptimizationResult>) -> OptimizationResult {
    runs.into_iter()
        .reduce(|best, r| if r.error < best.error { r } else { best })
        .expect("at least one run")
}

/// Round a switching time to `digits` decimals, ties to even.
pub fn round_time(t: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    (t * scale).round_ties_even() / scale
}

/// Round every switching time to `digits` decimals and re-evaluate the error.
pub fn quantize_times(sys: &ControlSystem, seq: &SwitchingSequence, digits: u32) -> (SwitchingSequence, f64) {
    let q: Vec<f64> = seq.durations().iter().map(|&t| round_time(t, digits)).collect();
    let q = seq.with_durations(q).expect("rounding keeps durations nonnegative");
    let e = sys.transfer_error(&q);
    (q, e)
}
