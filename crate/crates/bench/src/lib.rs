//! Criterion benchmarks for the propagation and optimization kernels; see `benches/`.
