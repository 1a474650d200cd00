//! Bang-bang evolution between the free Hamiltonian `H1` (actuator off) and
//! the perturbed `H2` (actuator on).
//!
//! Durations are stored in product order: the overall propagator is
//! `U = U(t_1) U(t_2) ... U(t_K)`, so `t_K` is applied first and `t_1` last.
//! Consecutive segments alternate between the two Hamiltonians; the
//! [`StartPhase`] fixes which one governs the chronologically first segment
//! (`t_K`).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chain::{apply_actuator, build_subspace_hamiltonian, Actuator, ChainSpec};
use crate::error::{Error, Result};
use crate::spectral::{phase, spectral_decompose, SpectralCache};

/// Which Hamiltonian a segment evolves under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Off,
    On,
}

impl Phase {
    pub fn flipped(self) -> Self {
        match self {
            Phase::Off => Phase::On,
            Phase::On => Phase::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPhase {
    ActuatorOffFirst,
    /// The alternation as written in the product `U1(t_1) U2(t_2) ... U2(t_K)`
    /// for even K.
    #[default]
    ActuatorOnFirst,
}

impl StartPhase {
    pub fn phase(self) -> Phase {
        match self {
            StartPhase::ActuatorOffFirst => Phase::Off,
            StartPhase::ActuatorOnFirst => Phase::On,
        }
    }

    fn from_phase(p: Phase) -> Self {
        match p {
            Phase::Off => StartPhase::ActuatorOffFirst,
            Phase::On => StartPhase::ActuatorOnFirst,
        }
    }
}

/// Switching-time sequence `(t_1, ..., t_K)` in product order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceRecord")]
pub struct SwitchingSequence {
    durations: Vec<f64>,
    start_phase: StartPhase,
}

/// Unvalidated serialized form.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRecord {
    durations: Vec<f64>,
    start_phase: StartPhase,
}

impl TryFrom<SequenceRecord> for SwitchingSequence {
    type Error = Error;

    fn try_from(r: SequenceRecord) -> Result<Self> {
        Self::new(r.durations, r.start_phase)
    }
}

impl SwitchingSequence {
    pub fn new(durations: Vec<f64>, start_phase: StartPhase) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::EmptySequence);
        }
        for (index, &value) in durations.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeDuration { index, value });
            }
        }
        Ok(Self {
            durations,
            start_phase,
        })
    }

    /// Single segment under `H1`.
    pub fn free(t: f64) -> Result<Self> {
        Self::new(vec![t], StartPhase::ActuatorOffFirst)
    }

    /// Same alternation, new durations.
    pub fn with_durations(&self, durations: Vec<f64>) -> Result<Self> {
        Self::new(durations, self.start_phase)
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn start_phase(&self) -> StartPhase {
        self.start_phase
    }

    pub fn total_time(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Hamiltonian of the segment at product index `k` (0-based).
    pub fn phase(&self, k: usize) -> Phase {
        let chrono = self.len() - 1 - k;
        self.chrono_phase(chrono)
    }

    /// Hamiltonian of the `c`-th segment in time order (0-based).
    pub fn chrono_phase(&self, c: usize) -> Phase {
        let first = self.start_phase.phase();
        if c.is_multiple_of(2) {
            first
        } else {
            first.flipped()
        }
    }

    /// `(phase, duration)` pairs in the order they are applied.
    pub fn chronological(&self) -> impl Iterator<Item = (Phase, f64)> + '_ {
        self.durations
            .iter()
            .rev()
            .enumerate()
            .map(|(c, &t)| (self.chrono_phase(c), t))
    }

    /// The sequence that runs `self` and then `next`. A zero-length segment
    /// is inserted when `next` would otherwise repeat the phase `self` ends
    /// with.
    pub fn then(&self, next: &SwitchingSequence) -> SwitchingSequence {
        let last = self.chrono_phase(self.len() - 1);
        let mut durations = next.durations.clone();
        if next.start_phase.phase() == last {
            durations.push(0.0);
        }
        durations.extend_from_slice(&self.durations);
        SwitchingSequence {
            durations,
            start_phase: self.start_phase,
        }
    }

    /// Build from time-ordered `(phase, duration)` pairs, merging repeats.
    pub fn from_chronological(segments: &[(Phase, f64)]) -> Result<Self> {
        let mut merged: Vec<(Phase, f64)> = Vec::new();
        for &(p, t) in segments {
            match merged.last_mut() {
                Some((lp, lt)) if *lp == p => *lt += t,
                _ => merged.push((p, t)),
            }
        }
        let first = merged.first().ok_or(Error::EmptySequence)?.0;
        let durations = merged.iter().rev().map(|&(_, t)| t).collect();
        Self::new(durations, StartPhase::from_phase(first))
    }
}

/// The pair of spectral caches plus the transfer endpoints (0-based internally).
#[derive(Debug, Clone)]
pub struct ControlSystem {
    off: Arc<SpectralCache>,
    on: Arc<SpectralCache>,
    source: usize,
    target: usize,
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl ControlSystem {
    /// Transfer from site 1 to site N.
    pub fn new(cache_off: SpectralCache, cache_on: SpectralCache) -> Result<Self> {
        if cache_off.dim() != cache_on.dim() {
            return Err(Error::DimensionMismatch {
                expected: cache_off.dim(),
                found: cache_on.dim(),
            });
        }
        let n = cache_off.dim();
        Ok(Self {
            off: Arc::new(cache_off),
            on: Arc::new(cache_on),
            source: 0,
            target: n - 1,
        })
    }

    pub fn from_chain(spec: &ChainSpec, actuator: &Actuator) -> Result<Self> {
        let h1 = build_subspace_hamiltonian(spec);
        let h2 = apply_actuator(spec, actuator)?;
        Self::new(spectral_decompose(&h1)?, spectral_decompose(&h2)?)
    }

    /// Same caches, transfer between 1-based sites `source` and `target`.
    pub fn with_endpoints(&self, source: usize, target: usize) -> Result<Self> {
        let n = self.dim();
        for site in [source, target] {
            if site == 0 || site > n {
                return Err(Error::SiteOutOfRange { site, n });
            }
        }
        Ok(Self {
            source: source - 1,
            target: target - 1,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.off.dim()
    }

    /// 1-based `(source, target)`.
    pub fn endpoints(&self) -> (usize, usize) {
        (self.source + 1, self.target + 1)
    }

    pub(crate) fn source_index(&self) -> usize {
        self.source
    }

    pub(crate) fn target_index(&self) -> usize {
        self.target
    }

    pub fn cache(&self, p: Phase) -> &SpectralCache {
        match p {
            Phase::Off => &self.off,
            Phase::On => &self.on,
        }
    }

    fn basis(&self, i: usize) -> Vec<Complex64> {
        let mut v = vec![zero(); self.dim()];
        v[i] = Complex64::new(1.0, 0.0);
        v
    }

    /// Full propagator `U(t_1) ... U(t_K)`.
    pub fn evolve_sequence(&self, seq: &SwitchingSequence) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut u = DMatrix::<Complex64>::identity(n, n);
        for (p, t) in seq.chronological() {
            u = self.cache(p).propagator(t) * u;
        }
        u
    }

    /// Evolve an arbitrary initial state through the sequence.
    pub fn propagate_state(&self, seq: &SwitchingSequence, initial: &[Complex64]) -> Result<Vec<Complex64>> {
        if initial.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: initial.len(),
            });
        }
        let mut psi = initial.to_vec();
        let mut scratch = vec![zero(); self.dim()];
        for (p, t) in seq.chronological() {
            self.cache(p).apply(t, &mut psi, &mut scratch);
        }
        Ok(psi)
    }

    /// `<target| U |source>`, by propagating a single vector.
    pub fn transfer_amplitude(&self, seq: &SwitchingSequence) -> Complex64 {
        let mut psi = self.basis(self.source);
        let mut scratch = vec![zero(); self.dim()];
        for (p, t) in seq.chronological() {
            self.cache(p).apply(t, &mut psi, &mut scratch);
        }
        psi[self.target]
    }

    /// `(fidelity, error)` with `error = 1 - fidelity`.
    pub fn transfer_fidelity(&self, seq: &SwitchingSequence) -> (f64, f64) {
        let f = self.transfer_amplitude(seq).norm_sqr().clamp(0.0, 1.0);
        (f, 1.0 - f)
    }

    pub fn transfer_error(&self, seq: &SwitchingSequence) -> f64 {
        self.transfer_fidelity(seq).1
    }

    /// State samples on a uniform grid of spacing `grid_step`, plus every
    /// switching instant and the final time.
    pub fn state_trace(&self, seq: &SwitchingSequence, grid_step: f64) -> Result<Vec<(f64, DVector<Complex64>)>> {
        if !(grid_step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid_step must be positive, got {grid_step}"
            )));
        }
        let n = self.dim();
        let mut out = Vec::new();
        let mut psi = self.basis(self.source);
        let mut coeffs = vec![zero(); n];
        let mut buf = vec![zero(); n];
        let mut start = 0.0;
        let mut next_grid = 0usize;
        out.push((0.0, DVector::from_column_slice(&psi)));
        for (p, t) in seq.chronological() {
            let cache = self.cache(p);
            cache.to_eigenbasis(&psi, &mut coeffs);
            let end = start + t;
            loop {
                let g = next_grid as f64 * grid_step;
                if g > end {
                    break;
                }
                next_grid += 1;
                if g <= start {
                    continue;
                }
                let tau = g - start;
                for ((b, &c), &l) in buf.iter_mut().zip(&coeffs).zip(cache.eigenvalues().iter()) {
                    *b = c * phase(l, tau);
                }
                let mut state = vec![zero(); n];
                cache.to_site_basis(&buf, &mut state);
                out.push((g, DVector::from_vec(state)));
            }
            // advance exactly by t so the final sample matches a plain propagation
            cache.apply(t, &mut psi, &mut buf);
            start = end;
            if out.last().map(|(tt, _)| *tt) != Some(end) {
                out.push((end, DVector::from_column_slice(&psi)));
            } else if let Some(last) = out.last_mut() {
                last.1 = DVector::from_column_slice(&psi);
            }
        }
        Ok(out)
    }

    /// `(t, |<target|psi(t)>|^2)` samples, see [`ControlSystem::state_trace`].
    pub fn population_trace(&self, seq: &SwitchingSequence, grid_step: f64) -> Result<Vec<(f64, f64)>> {
        let target = self.target;
        Ok(self
            .state_trace(seq, grid_step)?
            .into_iter()
            .map(|(t, s)| (t, s[target].norm_sqr()))
            .collect())
    }

    /// Transfer fidelity of free evolution under `H1` for time `t`.
    pub fn free_fidelity(&self, t: f64) -> f64 {
        let v = self.off.eigenvectors();
        let lambda = self.off.eigenvalues();
        let amp: Complex64 = (0..self.dim())
            .map(|j| v[(self.target, j)] * v[(self.source, j)] * phase(lambda[j], t))
            .sum();
        amp.norm_sqr()
    }

    /// Best free-evolution fidelity on `[0, t_max]` as `(fidelity, time)`.
    ///
    /// Every local maximum of a coarse scan is refined by golden-section
    /// search to a time resolution of 1e-6; the earliest time within 1e-9 of
    /// the best refined fidelity is reported.
    pub fn uncontrolled_peak(&self, t_max: f64, coarse_step: f64) -> Result<(f64, f64)> {
        if !(t_max > 0.0) || !(coarse_step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "t_max and coarse_step must be positive, got {t_max} and {coarse_step}"
            )));
        }
        let steps = (t_max / coarse_step).ceil() as usize;
        let grid: Vec<f64> = (0..=steps)
            .map(|i| (i as f64 * coarse_step).min(t_max))
            .collect();
        let values: Vec<f64> = grid.iter().map(|&t| self.free_fidelity(t)).collect();
        let mut peaks = Vec::new();
        for i in 0..grid.len() {
            let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
            let right = values.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
            if values[i] >= left && values[i] >= right {
                let lo = grid[i.saturating_sub(1)];
                let hi = grid[(i + 1).min(grid.len() - 1)];
                let (t, f) = golden_max(|t| self.free_fidelity(t), lo, hi, 1e-6);
                let (t, f) = if f >= values[i] { (t, f) } else { (grid[i], values[i]) };
                peaks.push((t, f));
            }
        }
        let best = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let (t, f) = peaks
            .into_iter()
            .filter(|p| p.1 >= best - 1e-9)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("scan has at least one sample");
        Ok((f, t))
    }
}

/// Maximize a unimodal `f` on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    let t = 0.5 * (lo + hi);
    (t, f(t))
}
