//! Bang-bang switching control of spin-chain quantum wires.
//!
//! The chain dynamics is restricted to the single-excitation subspace, where a
//! binary actuator toggles between two fixed Hamiltonians. The crate builds
//! those Hamiltonians, propagates switching sequences exactly through their
//! spectral decompositions, optimizes switching times with a projected Newton
//! method, and simulates model-free closed-loop optimization against
//! limited-precision fidelity measurements.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod closed_loop;
pub mod derivatives;
pub mod error;
pub mod optimize;
pub mod propagate;
pub mod seed;
pub mod spectral;

pub use chain::{
    apply_actuator, build_subspace_hamiltonian, sample_disordered_chain, Actuator, Bond, ChainFile,
    ChainSpec, ModelKind, SubspaceHamiltonian,
};
pub use closed_loop::{
    compare_algorithms, discrete_gradient, genetic_optimize, nelder_mead, quasi_newton_closed_loop,
    Algorithm, BenchmarkReport, CompareOptions, FidelityOracle, GeneticOptions, OracleMode,
    QuasiNewtonOptions, SimplexOptions, SimulatedOracle,
};
pub use derivatives::{error_and_gradient, error_gradient_hessian, gradient, hessian};
pub use error::{Error, Result};
pub use optimize::{
    multistart, multistart_runs, newton_optimize, quantize_times, GammaPolicy, NewtonOptions,
    OptimizationProblem, OptimizationResult, Regularization, StopReason,
};
pub use propagate::{ControlSystem, Phase, StartPhase, SwitchingSequence};
pub use spectral::{spectral_decompose, SpectralCache};
