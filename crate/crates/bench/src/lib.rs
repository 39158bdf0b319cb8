//! Criterion benchmarks for darts-lab; see `benches/`.
