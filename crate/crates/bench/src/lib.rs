//! Criterion benchmarks for the pipeline hot spots; see `benches/`.
