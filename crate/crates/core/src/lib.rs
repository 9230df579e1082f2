//! Page-level evidence extraction, relevance ranking and `<cot>`-gated
//! training example assembly for long-document visual question answering.
//!
//! The crate is organized along the data flow of a generation run:
//!
//! * [`document`] loads page-image directories and holds the shared domain types.
//! * [`config`] validates the flat pipeline configuration.
//! * [`backend`] talks to chat-completion endpoints (HTTP or scripted) with
//!   retries and a bounded-parallelism batch orchestrator.
//! * [`qgen`] samples source pages and asks a model for questions about them.
//! * [`extract`] scores every page for a question and keeps the top-K evidence.
//! * [`answer`] builds the visual-branch and text-branch teacher requests.
//! * [`tracegen`] renders traces, gates them behind `<cot>`, mixes datasets
//!   and reads/writes JSONL.
//! * [`pipeline`] strings the stages together for one document.

pub mod answer;
pub mod backend;
pub mod config;
pub mod document;
pub mod exec;
pub mod extract;
pub mod pipeline;
pub mod prompts;
pub mod qgen;
pub mod rng;
pub mod tracegen;

pub use config::{PipelineConfig, TraceFormat};
pub use document::{load_document, DocumentRef, PageImage, Question, SourceMode};
