//! Benchmark-only crate; see `benches/pipeline.rs`.
//!
//! Shared fixture builders live here so the bench file stays focused on
//! measurement.

use ucci_core::{sample_error_pairs, InferenceRecord, SyntheticSpec};

/// A reference-workload record set of the given size.
pub fn workload(n: usize) -> Vec<InferenceRecord> {
    SyntheticSpec::reference_workload(n, 7)
        .generate()
        .expect("reference workload generates")
}

/// Matched (uncertainty, error) pairs for calibration benchmarks.
pub fn error_pairs(n: usize) -> (Vec<f64>, Vec<u8>) {
    let spec = SyntheticSpec::reference_workload(n, 7);
    sample_error_pairs(&spec, n, 0).expect("pairs sample")
}
