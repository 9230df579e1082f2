//! Task-arithmetic merging of safetensors checkpoints:
//! `merged = base + alpha * (tuned - base)`, streamed tensor by tensor in
//! bounded chunks, with chained plans folded in a single pass.

pub mod dtype;
pub mod kernel;
mod merge;
pub mod store;

pub use dtype::{AccumDtype, Dtype};
pub use kernel::Execution;
pub use merge::{
    apply_merge_plan, peak_rss_bytes, task_arithmetic_merge, validate_compatibility, CompatibilityReport,
    Incompatibility, MergeError, MergeOptions, MergePlan, MergeReport, MergeStep,
};
pub use store::{StoreError, TensorInfo, TensorStore};
