//! Benchmarks for the hot loops of the monitoring pipeline live in `benches/`.
