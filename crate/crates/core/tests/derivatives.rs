mod common;

use common::random_chain;
use rand::Rng;
use spinwire_core::{error_and_gradient, error_gradient_hessian, seed, Actuator, ControlSystem, ModelKind, SwitchingSequence};

/// Random (system, sequence) pair with N in 3..=12, K in 2..=20.
fn instance(s: u64) -> (ControlSystem, SwitchingSequence) {
    let mut rng = seed::rng(s);
    let n = rng.random_range(3..=12);
    let k = rng.random_range(2..=20);
    let model = [ModelKind::Xy, ModelKind::Heisenberg, ModelKind::Xyz][rng.random_range(0..3)];
    let spec = random_chain(&mut rng, model, n);
    let sys = ControlSystem::from_chain(&spec, &Actuator::default()).unwrap();
    let d: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..4.0)).collect();
    (sys, SwitchingSequence::new(d, Default::default()).unwrap())
}

fn shifted(seq: &SwitchingSequence, k: usize, h: f64) -> SwitchingSequence {
    let mut d = seq.durations().to_vec();
    d[k] += h;
    seq.with_durations(d).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
    diff / scale
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    for s in 0..40 {
        let (sys, seq) = instance(s);
        let (_, g) = error_and_gradient(&sys, &seq);
        let fd: Vec<f64> = (0..seq.len())
            .map(|k| (sys.transfer_error(&shifted(&seq, k, h)) - sys.transfer_error(&shifted(&seq, k, -h))) / (2.0 * h))
            .collect();
        assert!(rel(&g, &fd) <= 1e-6, "instance {s}: {}", rel(&g, &fd));
    }
}

#[test]
fn hessian_is_symmetric_and_matches_differenced_gradients() {
    let h = 1e-4;
    for s in 100..120 {
        let (sys, seq) = instance(s);
        let (_, _, hess) = error_gradient_hessian(&sys, &seq);
        assert!((&hess - hess.transpose()).amax() <= 1e-10);
        for k in 0..seq.len() {
            let gp = error_and_gradient(&sys, &shifted(&seq, k, h)).1;
            let gm = error_and_gradient(&sys, &shifted(&seq, k, -h)).1;
            let col: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let analytic: Vec<f64> = hess.column(k).iter().copied().collect();
            let scale = hess.amax().max(1e-12);
            let diff = analytic.iter().zip(&col).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff / scale <= 1e-4, "instance {s}, column {k}: {}", diff / scale);
        }
    }
}
