//! Analytic first and second derivatives of the transfer error with respect
//! to the switching times.
//!
//! With `a = <N|U|1>` and `E = 1 - |a|^2`, differentiating segment k inserts
//! `-i H_k` next to its propagator, so
//! `dE/dt_k = -2 Im[<N|U^(k)|1> conj(a)]` where `U^(k)` carries `H_k` in slot k.
//! Both sweeps below work chronologically in the eigenbasis of each segment:
//! forward states `psi_c` and backward vectors `b_c` (propagators are complex
//! symmetric, so the backward bra obeys the same recursion as a ket).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::propagate::{ControlSystem, SwitchingSequence};
use crate::spectral::phase;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Per-segment eigen-coordinates shared by the gradient and Hessian.
struct Sweep<'a> {
    sys: &'a ControlSystem,
    seq: &'a SwitchingSequence,
    /// `V_c^T psi_c` (state entering segment c, in its eigenbasis).
    x: Vec<Vec<Complex64>>,
    /// `V_c^T b_{c+1}`.
    y: Vec<Vec<Complex64>>,
    /// `exp(-i lambda t_c)`.
    e: Vec<Vec<Complex64>>,
    amp: Complex64,
}

impl<'a> Sweep<'a> {
    fn new(sys: &'a ControlSystem, seq: &'a SwitchingSequence) -> Self {
        let n = sys.dim();
        let k = seq.len();
        let segments: Vec<_> = seq.chronological().collect();
        let mut x = Vec::with_capacity(k);
        let mut e = Vec::with_capacity(k);
        let mut psi = vec![ZERO; n];
        psi[sys.source_index()] = Complex64::new(1.0, 0.0);
        for &(p, t) in &segments {
            let cache = sys.cache(p);
            let mut xc = vec![ZERO; n];
            cache.to_eigenbasis(&psi, &mut xc);
            let ec: Vec<Complex64> = cache.eigenvalues().iter().map(|&l| phase(l, t)).collect();
            let rotated: Vec<Complex64> = xc.iter().zip(&ec).map(|(a, b)| a * b).collect();
            cache.to_site_basis(&rotated, &mut psi);
            x.push(xc);
            e.push(ec);
        }
        let amp = psi[sys.target_index()];
        let mut y = vec![Vec::new(); k];
        let mut b = vec![ZERO; n];
        b[sys.target_index()] = Complex64::new(1.0, 0.0);
        for c in (0..k).rev() {
            let cache = sys.cache(segments[c].0);
            let mut yc = vec![ZERO; n];
            cache.to_eigenbasis(&b, &mut yc);
            let rotated: Vec<Complex64> = yc.iter().zip(&e[c]).map(|(a, b)| a * b).collect();
            cache.to_site_basis(&rotated, &mut b);
            y[c] = yc;
        }
        Self {
            sys,
            seq,
            x,
            y,
            e,
            amp,
        }
    }

    fn lambdas(&self, c: usize) -> &[f64] {
        self.sys
            .cache(self.seq.chrono_phase(c))
            .eigenvalues()
            .as_slice()
    }

    fn error(&self) -> f64 {
        1.0 - self.amp.norm_sqr().clamp(0.0, 1.0)
    }

    /// `d a / d t_c` for every chronological segment.
    fn amp_derivatives(&self) -> Vec<Complex64> {
        let minus_i = Complex64::new(0.0, -1.0);
        (0..self.seq.len())
            .map(|c| {
                let l = self.lambdas(c);
                let s: Complex64 = (0..l.len())
                    .map(|j| self.y[c][j] * self.e[c][j] * self.x[c][j] * l[j])
                    .sum();
                minus_i * s
            })
            .collect()
    }

    fn gradient_chrono(&self, da: &[Complex64]) -> Vec<f64> {
        let ca = self.amp.conj();
        da.iter().map(|d| -2.0 * (ca * d).re).collect()
    }

    fn hessian_chrono(&self, da: &[Complex64]) -> DMatrix<f64> {
        let k = self.seq.len();
        let n = self.sys.dim();
        let ca = self.amp.conj();
        let minus_i = Complex64::new(0.0, -1.0);
        let mut h = DMatrix::zeros(k, k);
        let mut eta = vec![ZERO; n];
        let mut coords = vec![ZERO; n];
        for c in 0..k {
            let lc = self.lambdas(c);
            let d2: Complex64 = (0..n)
                .map(|j| self.y[c][j] * self.e[c][j] * self.x[c][j] * (-lc[j] * lc[j]))
                .sum();
            h[(c, c)] = -2.0 * (da[c].norm_sqr() + (ca * d2).re);

            // eta = d psi_{c+1} / d t_c, then carried forward through later segments
            let cache_c = self.sys.cache(self.seq.chrono_phase(c));
            let seed: Vec<Complex64> = (0..n)
                .map(|j| minus_i * lc[j] * self.e[c][j] * self.x[c][j])
                .collect();
            cache_c.to_site_basis(&seed, &mut eta);
            for d in (c + 1)..k {
                let cache_d = self.sys.cache(self.seq.chrono_phase(d));
                let ld = self.lambdas(d);
                cache_d.to_eigenbasis(&eta, &mut coords);
                let mut s = ZERO;
                for j in 0..n {
                    let ec = self.e[d][j] * coords[j];
                    s += self.y[d][j] * ec * ld[j];
                    coords[j] = ec;
                }
                let d2 = minus_i * s;
                let v = -2.0 * ((da[c].conj() * da[d]).re + (ca * d2).re);
                h[(c, d)] = v;
                h[(d, c)] = v;
                if d + 1 < k {
                    cache_d.to_site_basis(&coords, &mut eta);
                }
            }
        }
        h
    }
}

/// Reorder a chronological vector into product order `t_1..t_K`.
fn to_product_order(mut v: Vec<f64>) -> Vec<f64> {
    v.reverse();
    v
}

fn to_product_order_matrix(h: DMatrix<f64>) -> DMatrix<f64> {
    let k = h.nrows();
    DMatrix::from_fn(k, k, |r, c| h[(k - 1 - r, k - 1 - c)])
}

/// `dE/dt_k` in product order.
pub fn gradient(sys: &ControlSystem, seq: &SwitchingSequence) -> Vec<f64> {
    error_and_gradient(sys, seq).1
}

pub fn error_and_gradient(sys: &ControlSystem, seq: &SwitchingSequence) -> (f64, Vec<f64>) {
    let sweep = Sweep::new(sys, seq);
    let da = sweep.amp_derivatives();
    (sweep.error(), to_product_order(sweep.gradient_chrono(&da)))
}

/// `d^2E / dt_k dt_l` in product order; symmetric by construction.
pub fn hessian(sys: &ControlSystem, seq: &SwitchingSequence) -> DMatrix<f64> {
    error_gradient_hessian(sys, seq).2
}

/// Error, gradient and Hessian from one pair of sweeps.
pub fn error_gradient_hessian(sys: &ControlSystem, seq: &SwitchingSequence) -> (f64, Vec<f64>, DMatrix<f64>) {
    let sweep = Sweep::new(sys, seq);
    let da = sweep.amp_derivatives();
    let g = to_product_order(sweep.gradient_chrono(&da));
    let h = to_product_order_matrix(sweep.hessian_chrono(&da));
    (sweep.error(), g, h)
}
