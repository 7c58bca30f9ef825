//! Criterion benchmarks for `rsqn`. Run with `cargo bench -p rsqn-bench`.
