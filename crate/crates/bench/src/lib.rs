//! Criterion benchmarks for `pyranet-core`; see `benches/`.
