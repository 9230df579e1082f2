//! Pipeline configuration.
//!
//! The configuration is a flat key/value table (usually the `[pipeline]`
//! table of a TOML file). Absent keys take their defaults; unknown keys are
//! rejected.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `relevance_threshold` | `1.0` | minimum score kept by ranking |
//! | `top_k` | `24` | maximum evidence entries in a trace |
//! | `score_min` / `score_max` | `0.0` / `10.0` | relevance scale; parsed scores are clamped into it |
//! | `source_score_floor` | `6.0` | lower bound the extractor is asked to give source pages |
//! | `cot_probability` | `0.95` | probability an example carries `<cot>` and a trace |
//! | `text_branch_ratio` | `0.5` | probability an answer comes from the text branch |
//! | `trace_format` | `"v2"` | `"v1"` (every page, document order) or `"v2"` (top-K, relevance order) |
//! | `rng_seed` | `0` | root seed for every random draw |
//! | `question_types` | math, reasoning, summarization, lookup | question type tags |
//! | `max_span_len` | `8` | upper bound for multi-page source subsets |
//! | `extraction_temperature` | `0.0` | sampling temperature for the extractor |
//! | `answer_temperature` | `0.7` | sampling temperature for both teachers |
//! | `question_temperature` | `0.7` | sampling temperature for question generation |
//! | `extraction_max_tokens` | `1024` | |
//! | `answer_max_tokens` | `2048` | |
//! | `question_max_tokens` | `256` | |
//! | `extractor_model` | Qwen3 VL 32B Instruct | |
//! | `visual_teacher_model` | Qwen3 VL 235B A22B Instruct | |
//! | `text_teacher_model` | Qwen3 235B A22B Instruct | |
//! | `question_model` | Qwen3 VL 235B A22B Instruct | |
//! | `system_prompt` | short assistant prompt | system prompt of emitted examples (without `<cot>`) |

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Literal control token gating the reasoning trace.
pub const COT_TOKEN: &str = "<cot>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    V1,
    #[default]
    V2,
}

impl fmt::Display for TraceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceFormat::V1 => "v1",
            TraceFormat::V2 => "v2",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("`{key}` = {value} is out of range ({expected})")]
    InvalidRange { key: &'static str, value: String, expected: &'static str },
    #[error("inconsistent bounds: {0}")]
    InconsistentBounds(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub relevance_threshold: f64,
    pub top_k: usize,
    pub score_min: f64,
    pub score_max: f64,
    pub source_score_floor: f64,
    pub cot_probability: f64,
    pub text_branch_ratio: f64,
    pub trace_format: TraceFormat,
    pub rng_seed: u64,
    pub question_types: Vec<String>,
    pub max_span_len: u32,
    pub extraction_temperature: f64,
    pub answer_temperature: f64,
    pub question_temperature: f64,
    pub extraction_max_tokens: u32,
    pub answer_max_tokens: u32,
    pub question_max_tokens: u32,
    pub extractor_model: String,
    pub visual_teacher_model: String,
    pub text_teacher_model: String,
    pub question_model: String,
    pub system_prompt: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            relevance_threshold: 1.0,
            top_k: 24,
            score_min: 0.0,
            score_max: 10.0,
            source_score_floor: 6.0,
            cot_probability: 0.95,
            text_branch_ratio: 0.5,
            trace_format: TraceFormat::V2,
            rng_seed: 0,
            question_types: ["math", "reasoning", "summarization", "lookup"]
                .map(String::from)
                .to_vec(),
            max_span_len: 8,
            extraction_temperature: 0.0,
            answer_temperature: 0.7,
            question_temperature: 0.7,
            extraction_max_tokens: 1024,
            answer_max_tokens: 2048,
            question_max_tokens: 256,
            extractor_model: "Qwen/Qwen3-VL-32B-Instruct".into(),
            visual_teacher_model: "Qwen/Qwen3-VL-235B-A22B-Instruct".into(),
            text_teacher_model: "Qwen/Qwen3-235B-A22B-Instruct-2507".into(),
            question_model: "Qwen/Qwen3-VL-235B-A22B-Instruct".into(),
            system_prompt: "You are a helpful assistant that answers questions about documents."
                .into(),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "relevance_threshold",
    "top_k",
    "score_min",
    "score_max",
    "source_score_floor",
    "cot_probability",
    "text_branch_ratio",
    "trace_format",
    "rng_seed",
    "question_types",
    "max_span_len",
    "extraction_temperature",
    "answer_temperature",
    "question_temperature",
    "extraction_max_tokens",
    "answer_max_tokens",
    "question_max_tokens",
    "extractor_model",
    "visual_teacher_model",
    "text_teacher_model",
    "question_model",
    "system_prompt",
];

/// Applies defaults to a raw key/value table and checks every invariant.
pub fn validate_config(raw: &toml::Table) -> Result<PipelineConfig, ConfigError> {
    if let Some(key) = raw.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(key.clone()));
    }
    let cfg: PipelineConfig = toml::Value::Table(raw.clone())
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn unit_interval(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::InvalidRange { key, value: v.to_string(), expected: "0 <= value <= 1" })
    }
}

fn temperature(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::InvalidRange { key, value: v.to_string(), expected: "finite, >= 0" })
    }
}

fn positive(key: &'static str, v: u64) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(ConfigError::InvalidRange { key, value: v.to_string(), expected: ">= 1" })
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let table: toml::Table =
            toml::from_str(s).map_err(|e| ConfigError::Invalid(e.message().to_string()))?;
        validate_config(&table)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("score_min", self.score_min),
            ("score_max", self.score_max),
            ("relevance_threshold", self.relevance_threshold),
            ("source_score_floor", self.source_score_floor),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::InvalidRange { key, value: v.to_string(), expected: "finite" });
            }
        }
        if self.score_min >= self.score_max {
            return Err(ConfigError::InconsistentBounds(format!(
                "score_min {} must be below score_max {}",
                self.score_min, self.score_max
            )));
        }
        if self.relevance_threshold < 0.0 {
            return Err(ConfigError::InvalidRange {
                key: "relevance_threshold",
                value: self.relevance_threshold.to_string(),
                expected: ">= 0",
            });
        }
        if self.relevance_threshold > self.score_max {
            return Err(ConfigError::InconsistentBounds(format!(
                "relevance_threshold {} exceeds score_max {}",
                self.relevance_threshold, self.score_max
            )));
        }
        if !(self.score_min < self.source_score_floor && self.source_score_floor <= self.score_max) {
            return Err(ConfigError::InconsistentBounds(format!(
                "source_score_floor {} must lie in ({}, {}]",
                self.source_score_floor, self.score_min, self.score_max
            )));
        }
        unit_interval("cot_probability", self.cot_probability)?;
        unit_interval("text_branch_ratio", self.text_branch_ratio)?;
        temperature("extraction_temperature", self.extraction_temperature)?;
        temperature("answer_temperature", self.answer_temperature)?;
        temperature("question_temperature", self.question_temperature)?;
        positive("top_k", self.top_k as u64)?;
        positive("max_span_len", self.max_span_len as u64)?;
        positive("extraction_max_tokens", self.extraction_max_tokens as u64)?;
        positive("answer_max_tokens", self.answer_max_tokens as u64)?;
        positive("question_max_tokens", self.question_max_tokens as u64)?;
        if self.question_types.is_empty() || self.question_types.iter().any(|t| t.trim().is_empty()) {
            return Err(ConfigError::Invalid("question_types must be a non-empty list of names".into()));
        }
        if self.system_prompt.contains(COT_TOKEN) {
            return Err(ConfigError::Invalid(format!(
                "system_prompt must not contain {COT_TOKEN}; it is added per example"
            )));
        }
        Ok(())
    }
}
