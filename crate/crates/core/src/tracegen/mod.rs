//! Reasoning traces, `<cot>`-gated training examples, dataset mixing and
//! JSONL serialization.

mod example;
mod jsonl;
mod mix;
mod report;
mod trace;

pub use example::{
    assemble_example, assemble_with_gate, strip_think, ExampleTrace, TraceError, TraceSource, TrainingExample,
    UserPart,
};
pub use jsonl::{read_jsonl, write_jsonl, JsonlError, JsonlWriter};
pub use mix::{apportion, mix_datasets, MixError, MixOutput, MixPart, MixSource, MixSpec, MixedLine};
pub use report::{dataset_report, mean, median, DatasetReport};
pub use trace::{render_trace_v1, render_trace_v2, think_block_lines, EMPTY_TRACE_SENTINEL, IRRELEVANT_MARKER};
