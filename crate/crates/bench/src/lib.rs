//! Benchmarks for pacc-core live under `benches/`.
