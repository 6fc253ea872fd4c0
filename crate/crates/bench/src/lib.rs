//! Exact multiply-accumulate accounting and single-threaded wall-clock
//! timing of the matvec kernels, plus CSV/JSON report files.

mod error;
pub mod macs;
pub mod report;
pub mod timing;

pub use error::{BenchError, Result};
pub use macs::{count_macs, count_weight, instrumented_macs, MacEntry, MacReport, MacTotals};
pub use report::{emit_report, read_csv, ReportRow};
pub use timing::{csr_sparsity_sweep, time_matvec, KernelKind, TimingResult, TimingSpec};
