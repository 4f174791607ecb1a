//! Criterion benchmarks of the filter steps, the canonical transform and the
//! observability SVD. Run with `cargo bench -p kdcl-bench`.
