//! Criterion benchmarks for projection assembly and corrector solves live under `benches/`.
