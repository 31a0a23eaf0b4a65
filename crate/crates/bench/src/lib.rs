//! Benchmark-only crate; see benches/aggregation.rs.
