mod common;

use common::{brute_fidelity, full_hamiltonian, random_chain, random_sequence};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use spinwire_core::{
    build_subspace_hamiltonian, seed, spectral_decompose, Actuator, ChainSpec, ControlSystem, ModelKind, Phase,
    SubspaceHamiltonian, SwitchingSequence,
};

fn model(i: u8) -> ModelKind {
    [ModelKind::Xy, ModelKind::Heisenberg, ModelKind::Xyz][i as usize % 3]
}

fn system(spec: &ChainSpec, act: &Actuator) -> ControlSystem {
    ControlSystem::from_chain(spec, act).unwrap()
}

fn sequence(durations: Vec<f64>) -> SwitchingSequence {
    SwitchingSequence::new(durations, Default::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagators_are_unitary(s in any::<u64>(), n in 2usize..12, m in 0u8..3,
                               d in prop::collection::vec(0.0f64..20.0, 1..12)) {
        let spec = random_chain(&mut seed::rng(s), model(m), n);
        let sys = system(&spec, &Actuator::default());
        let u = sys.evolve_sequence(&sequence(d));
        let defect = u.adjoint() * &u - DMatrix::<Complex64>::identity(n, n);
        prop_assert!(defect.iter().all(|z| z.norm() <= 1e-10));
    }

    #[test]
    fn traces_conserve_norm(s in any::<u64>(), n in 2usize..10, d in prop::collection::vec(0.01f64..5.0, 1..8)) {
        let spec = random_chain(&mut seed::rng(s), ModelKind::Xyz, n);
        let sys = system(&spec, &Actuator::default());
        for (_, psi) in sys.state_trace(&sequence(d), 0.1).unwrap() {
            prop_assert!((psi.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn fidelity_is_bounded(s in any::<u64>(), n in 2usize..12, d in prop::collection::vec(0.0f64..50.0, 1..20)) {
        let spec = random_chain(&mut seed::rng(s), ModelKind::Heisenberg, n);
        let (f, e) = system(&spec, &Actuator::default()).transfer_fidelity(&sequence(d));
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f + e - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn uniform_chains_are_mirror_symmetric(n in 2usize..16, m in 0u8..3, t in 0.0f64..60.0) {
        let spec = ChainSpec::uniform(model(m), n).unwrap();
        let sys = system(&spec, &Actuator::default());
        let forward = sys.free_fidelity(t);
        let backward = sys.with_endpoints(n, 1).unwrap().free_fidelity(t);
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn composition_is_matrix_product(s in any::<u64>(), n in 2usize..10,
                                     a in prop::collection::vec(0.0f64..10.0, 1..6),
                                     b in prop::collection::vec(0.0f64..10.0, 1..6)) {
        let spec = random_chain(&mut seed::rng(s), ModelKind::Xyz, n);
        let sys = system(&spec, &Actuator::default());
        let (sa, sb) = (sequence(a), sequence(b));
        // `then` applies its argument after `self`.
        let joined = sys.evolve_sequence(&sa.then(&sb));
        let product = sys.evolve_sequence(&sb) * sys.evolve_sequence(&sa);
        prop_assert!((joined - product).iter().all(|z| z.norm() <= 1e-12));
    }

    #[test]
    fn identity_shift_leaves_fidelity(s in any::<u64>(), n in 2usize..10, c in -5.0f64..5.0, which in 0u8..2,
                                      d in prop::collection::vec(0.0f64..10.0, 1..10)) {
        let spec = random_chain(&mut seed::rng(s), ModelKind::Heisenberg, n);
        let act = Actuator::default();
        let h1 = build_subspace_hamiltonian(&spec);
        let h2 = spinwire_core::apply_actuator(&spec, &act).unwrap();
        let (h1s, h2s) = if which == 0 { (h1.shifted(c), h2.clone()) } else { (h1.clone(), h2.shifted(c)) };
        let base = ControlSystem::new(spectral_decompose(&h1).unwrap(), spectral_decompose(&h2).unwrap()).unwrap();
        let moved = ControlSystem::new(spectral_decompose(&h1s).unwrap(), spectral_decompose(&h2s).unwrap()).unwrap();
        let seq = sequence(d);
        prop_assert!((base.transfer_fidelity(&seq).0 - moved.transfer_fidelity(&seq).0).abs() <= 1e-12);
    }
}

#[test]
fn subspace_agrees_with_full_space() {
    let mut rng = seed::rng(21);
    for case in 0..30 {
        let n = 2 + case % 5;
        let spec = random_chain(&mut rng, model(case as u8), n);
        let seq = random_sequence(&mut rng, 1 + case % 7, 3.0);
        let sys = system(&spec, &Actuator::SwitchOffCoupling { m: 1, n: 2 });
        let mut jx_on = spec.jx().clone();
        let mut jz_on = spec.jz().clone();
        for (a, b) in [(0, 1), (1, 0)] {
            jx_on[(a, b)] = 0.0;
            jz_on[(a, b)] = 0.0;
        }
        let h_off = full_hamiltonian(spec.jx(), spec.jz(), &[]);
        let h_on = full_hamiltonian(&jx_on, &jz_on, &[]);
        let reference = brute_fidelity(&h_off, &h_on, &seq, 0, n - 1);
        let f = sys.transfer_fidelity(&seq).0;
        assert!((f - reference).abs() <= 1e-9, "case {case}: {f} vs {reference}");
    }
}

#[test]
fn state_propagation_matches_matrix() {
    let spec = ChainSpec::uniform(ModelKind::Xyz, 6).unwrap();
    let sys = system(&spec, &Actuator::default());
    let seq = sequence(vec![1.0, 0.4, 2.2]);
    let psi0: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, 1.0)).collect();
    let norm = psi0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let psi0: Vec<Complex64> = psi0.iter().map(|z| z / norm).collect();
    let out = DVector::from_vec(sys.propagate_state(&seq, &psi0).unwrap());
    let expected = sys.evolve_sequence(&seq) * DVector::from_vec(psi0);
    assert!((out - expected).iter().all(|z| z.norm() <= 1e-12));
}

#[test]
fn phases_alternate_in_time() {
    let seq = sequence(vec![1.0, 2.0, 3.0]);
    let phases: Vec<Phase> = seq.chronological().map(|(p, _)| p).collect();
    assert_eq!(phases, vec![Phase::On, Phase::Off, Phase::On]);
    let times: Vec<f64> = seq.chronological().map(|(_, t)| t).collect();
    assert_eq!(times, vec![3.0, 2.0, 1.0]);
}

#[test]
fn shifted_hamiltonian_only_moves_diagonal() {
    let h = SubspaceHamiltonian::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
    let s = h.shifted(2.5);
    assert_eq!(s.matrix()[(0, 1)], 1.0);
    assert_eq!(s.matrix()[(1, 1)], 2.5);
}
