//! Criterion benchmarks for the learners live in `benches/`.
