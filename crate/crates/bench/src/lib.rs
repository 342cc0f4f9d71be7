//! Criterion benchmarks for physec-core live in `benches/`.
