//! Criterion benchmarks for the hot loops of `ergolab-core`; see `benches/`.
