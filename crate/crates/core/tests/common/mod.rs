//! Independent reference implementations shared by the integration tests.
//!
//! The brute-force model works in the full 2^N Hilbert space with dense
//! Pauli products and a Taylor-series exponential, sharing no code with the
//! subspace propagator it checks.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use spinwire_core::{ChainSpec, ModelKind, Phase, SwitchingSequence};

pub type CMat = DMatrix<Complex64>;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Bit `n` set means spin `n` (0-based) is excited (sigma^z = -1).
fn excited(state: usize, n: usize) -> bool {
    state >> n & 1 == 1
}

/// `1/2 sum_{m<n} [Jx (XX + YY) + Jz ZZ]` plus optional on-site shifts
/// `delta_s (1 - Z_s) / 2`.
pub fn full_hamiltonian(jx: &DMatrix<f64>, jz: &DMatrix<f64>, onsite: &[f64]) -> CMat {
    let n = jx.nrows();
    let dim = 1usize << n;
    let mut h = CMat::zeros(dim, dim);
    for s in 0..dim {
        for a in 0..n {
            if excited(s, a) {
                h[(s, s)] += onsite.get(a).copied().unwrap_or(0.0);
            }
            for b in a + 1..n {
                let za = if excited(s, a) { -1.0 } else { 1.0 };
                let zb = if excited(s, b) { -1.0 } else { 1.0 };
                h[(s, s)] += 0.5 * jz[(a, b)] * za * zb;
                // XX + YY flips an antiparallel pair with amplitude 2.
                if excited(s, a) != excited(s, b) {
                    let t = s ^ (1 << a) ^ (1 << b);
                    h[(t, s)] += jx[(a, b)];
                }
            }
        }
    }
    h
}

/// Total z magnetization `sum_n Z_n`.
pub fn total_sz(n: usize) -> CMat {
    let dim = 1usize << n;
    CMat::from_fn(dim, dim, |r, c| {
        if r != c {
            return Complex64::new(0.0, 0.0);
        }
        let up = (0..n).filter(|&k| !excited(r, k)).count() as f64;
        Complex64::new(2.0 * up - n as f64, 0.0)
    })
}

/// Index of the single-excitation basis state at 0-based site `k`.
pub fn single(k: usize) -> usize {
    1 << k
}

/// `exp(-i H t)` by scaling and squaring with a Taylor series.
pub fn expm_i(h: &CMat, t: f64) -> CMat {
    let a = h * Complex64::new(0.0, -t);
    let norm = a.iter().map(|z| z.norm()).fold(0.0, f64::max) * a.nrows() as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = &a / Complex64::new(2f64.powi(squarings as i32), 0.0);
    let dim = a.nrows();
    let mut term = CMat::identity(dim, dim);
    let mut sum = CMat::identity(dim, dim);
    for k in 1..=30 {
        term = &term * &scaled / Complex64::new(k as f64, 0.0);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Brute-force transfer fidelity `|<target| U |source>|^2` (0-based sites).
pub fn brute_fidelity(h_off: &CMat, h_on: &CMat, seq: &SwitchingSequence, source: usize, target: usize) -> f64 {
    let dim = h_off.nrows();
    let mut u = CMat::identity(dim, dim);
    for (p, t) in seq.chronological() {
        let h = if p == Phase::On { h_on } else { h_off };
        u = expm_i(h, t) * u;
    }
    u[(single(target), single(source))].norm_sqr()
}

/// Random chain with all-to-all couplings in [-1, 1] for the given model.
pub fn random_chain<R: Rng>(rng: &mut R, model: ModelKind, n: usize) -> ChainSpec {
    let mut jx = DMatrix::zeros(n, n);
    let mut jz = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let x: f64 = rng.random_range(-1.0..1.0);
            let z = match model {
                ModelKind::Xy => 0.0,
                ModelKind::Heisenberg => x,
                ModelKind::Xyz => rng.random_range(-1.0..1.0),
            };
            jx[(a, b)] = x;
            jx[(b, a)] = x;
            jz[(a, b)] = z;
            jz[(b, a)] = z;
        }
    }
    ChainSpec::new(model, jx, jz).expect("valid random chain")
}

/// Random sequence of `k` segments with durations in (0, t_seg].
pub fn random_sequence<R: Rng>(rng: &mut R, k: usize, t_seg: f64) -> SwitchingSequence {
    let d: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..t_seg)).collect();
    SwitchingSequence::new(d, Default::default()).expect("positive durations")
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim) * ONE
}
