use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::{render_trace_v1, render_trace_v2};
use crate::answer::{AnswerRecord, Branch};
use crate::config::{PipelineConfig, COT_TOKEN};
use crate::document::{DocumentRef, Question};
use crate::extract::{EvidenceRecord, RankedEvidence};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TraceError {
    #[error("assistant text opens a think block without closing it")]
    MalformedThinkBlock,
    #[error("example violates the <cot> gating invariant: {0}")]
    GatingViolation(&'static str),
}

/// Trace design an example was built with; `none` for ungated examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleTrace {
    V1,
    V2,
    None,
}

/// User-turn content as stored in JSONL. Images are paths relative to the
/// document root, never inlined bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UserPart {
    Text { text: String },
    Image { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub doc_id: String,
    pub system: String,
    pub user: Vec<UserPart>,
    pub assistant: String,
    pub has_cot: bool,
    pub branch: Branch,
    pub trace_format: ExampleTrace,
}

impl TrainingExample {
    pub fn page_count(&self) -> usize {
        self.user.iter().filter(|p| matches!(p, UserPart::Image { .. })).count()
    }

    /// `has_cot` ⇔ system has `<cot>` ⇔ assistant opens with `<think>` and
    /// closes it exactly once; ungated examples carry no `<think>` at all.
    pub fn validate(&self) -> Result<(), TraceError> {
        let system_cot = self.system.contains(COT_TOKEN);
        let opens = self.assistant.starts_with(THINK_OPEN);
        let closes = self.assistant.matches(THINK_CLOSE).count();
        if self.has_cot {
            if !system_cot {
                return Err(TraceError::GatingViolation("gated example without <cot> in system"));
            }
            if !opens || closes != 1 {
                return Err(TraceError::GatingViolation("gated example needs exactly one think block"));
            }
            if self.trace_format == ExampleTrace::None {
                return Err(TraceError::GatingViolation("gated example without a trace format"));
            }
        } else {
            if system_cot {
                return Err(TraceError::GatingViolation("ungated example with <cot> in system"));
            }
            if self.assistant.contains(THINK_OPEN) || closes != 0 {
                return Err(TraceError::GatingViolation("ungated example with a think block"));
            }
        }
        Ok(())
    }
}

/// Evidence the trace is rendered from.
#[derive(Debug, Clone, Copy)]
pub enum TraceSource<'a> {
    /// Bounded, relevance-sorted trace.
    Ranked(&'a RankedEvidence),
    /// Every page in document order with `irrelevant` markers.
    AllPages { records: &'a [EvidenceRecord], threshold: f64 },
}

impl TraceSource<'_> {
    fn render(&self) -> String {
        match self {
            TraceSource::Ranked(r) => render_trace_v2(r),
            TraceSource::AllPages { records, threshold } => render_trace_v1(records, *threshold),
        }
    }

    fn format(&self) -> ExampleTrace {
        match self {
            TraceSource::Ranked(_) => ExampleTrace::V2,
            TraceSource::AllPages { .. } => ExampleTrace::V1,
        }
    }
}

fn relative_path(path: &Path, root: Option<&Path>) -> String {
    let rel = root.and_then(|r| path.strip_prefix(r).ok()).unwrap_or(path);
    rel.to_string_lossy().replace('\\', "/")
}

fn user_parts(doc: &DocumentRef, question: &Question, image_root: Option<&Path>) -> Vec<UserPart> {
    let mut parts = Vec::with_capacity(doc.pages().len() * 2 + 1);
    for page in doc.pages() {
        parts.push(UserPart::Text { text: format!("Page {}:", page.index) });
        parts.push(UserPart::Image { path: relative_path(&page.image_path, image_root) });
    }
    parts.push(UserPart::Text { text: question.text.clone() });
    parts
}

/// Builds an example with an explicit gate decision.
pub fn assemble_with_gate(
    doc: &DocumentRef,
    question: &Question,
    trace: TraceSource<'_>,
    answer: &AnswerRecord,
    cfg: &PipelineConfig,
    gated: bool,
    image_root: Option<&Path>,
) -> TrainingExample {
    let (system, assistant, trace_format) = if gated {
        (
            format!("{} {COT_TOKEN}", cfg.system_prompt),
            format!("{}\n{}", trace.render(), answer.text()),
            trace.format(),
        )
    } else {
        (cfg.system_prompt.clone(), answer.text().to_string(), ExampleTrace::None)
    };
    TrainingExample {
        doc_id: doc.doc_id().to_string(),
        system,
        user: user_parts(doc, question, image_root),
        assistant,
        has_cot: gated,
        branch: answer.branch(),
        trace_format,
    }
}

/// Draws the `<cot>` gate (gated with probability `cfg.cot_probability`) and
/// builds the example.
pub fn assemble_example(
    doc: &DocumentRef,
    question: &Question,
    trace: TraceSource<'_>,
    answer: &AnswerRecord,
    cfg: &PipelineConfig,
    rng: &mut impl Rng,
    image_root: Option<&Path>,
) -> TrainingExample {
    let gated = rng.random::<f64>() < cfg.cot_probability;
    assemble_with_gate(doc, question, trace, answer, cfg, gated, image_root)
}

fn strip_cot(system: &str) -> String {
    match system.strip_suffix(COT_TOKEN) {
        Some(head) if !head.contains(COT_TOKEN) => head.trim_end().to_string(),
        _ => system.replace(COT_TOKEN, "").trim_end().to_string(),
    }
}

/// No-think variant: same final answer, no control token, no think block.
pub fn strip_think(example: &TrainingExample) -> Result<TrainingExample, TraceError> {
    let assistant = match example.assistant.find(THINK_OPEN) {
        Some(open) => {
            let after_open = &example.assistant[open + THINK_OPEN.len()..];
            let close = after_open.find(THINK_CLOSE).ok_or(TraceError::MalformedThinkBlock)?;
            after_open[close + THINK_CLOSE.len()..].trim().to_string()
        }
        None if example.assistant.contains(THINK_CLOSE) => return Err(TraceError::MalformedThinkBlock),
        None => example.assistant.clone(),
    };
    Ok(TrainingExample {
        system: strip_cot(&example.system),
        assistant,
        has_cot: false,
        trace_format: ExampleTrace::None,
        ..example.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{PageImage, SourceMode};
    use crate::rng::seeded;

    fn doc() -> DocumentRef {
        let pages = (1..=3)
            .map(|i| PageImage { index: i, image_path: format!("/data/docs/d/page_{i:04}.png").into(), byte_len: 1 })
            .collect();
        DocumentRef::new("d", pages).unwrap()
    }

    fn question() -> Question {
        Question::new("What is the total?", [2].into(), SourceMode::Single, "math").unwrap()
    }

    fn ranked() -> RankedEvidence {
        RankedEvidence::new(
            vec![EvidenceRecord {
                page_index: 2,
                snippet: "total 42".into(),
                score: 8.0,
                was_clamped: false,
                is_source: true,
                failed: false,
            }],
            24,
            1.0,
        )
        .unwrap()
    }

    fn answer() -> AnswerRecord {
        AnswerRecord::new("42", Branch::Text, "teacher", vec![]).unwrap()
    }

    #[test]
    fn gated_example_layout() {
        let cfg = PipelineConfig::default();
        let r = ranked();
        let ex = assemble_with_gate(&doc(), &question(), TraceSource::Ranked(&r), &answer(), &cfg, true, Some(Path::new("/data/docs")));
        assert!(ex.has_cot);
        assert!(ex.system.ends_with(" <cot>"));
        assert_eq!(ex.assistant, "<think>\nPage 2: total 42\n</think>\n42");
        assert_eq!(ex.trace_format, ExampleTrace::V2);
        assert_eq!(ex.user[0], UserPart::Text { text: "Page 1:".into() });
        assert_eq!(ex.user[1], UserPart::Image { path: "d/page_0001.png".into() });
        assert_eq!(ex.user.last().unwrap(), &UserPart::Text { text: "What is the total?".into() });
        assert_eq!(ex.page_count(), 3);
        ex.validate().unwrap();
    }

    #[test]
    fn ungated_example_is_answer_only() {
        let cfg = PipelineConfig::default();
        let r = ranked();
        let ex = assemble_with_gate(&doc(), &question(), TraceSource::Ranked(&r), &answer(), &cfg, false, None);
        assert!(!ex.has_cot);
        assert_eq!(ex.assistant, "42");
        assert_eq!(ex.system, cfg.system_prompt);
        assert_eq!(ex.trace_format, ExampleTrace::None);
        ex.validate().unwrap();
    }

    #[test]
    fn gate_follows_seeded_draw() {
        let cfg = PipelineConfig::default();
        let r = ranked();
        for seed in 0..200 {
            let draw: f64 = seeded(seed).random();
            let ex = assemble_example(&doc(), &question(), TraceSource::Ranked(&r), &answer(), &cfg, &mut seeded(seed), None);
            assert_eq!(ex.has_cot, draw < 0.95);
            if ex.has_cot {
                assert!(ex.assistant.starts_with("<think>"));
            } else {
                assert_eq!(ex.assistant, "42");
            }
        }
    }

    #[test]
    fn gate_fraction_matches_probability() {
        let cfg = PipelineConfig::default();
        let r = ranked();
        let mut rng = seeded(95);
        let gated = (0..10_000)
            .filter(|_| assemble_example(&doc(), &question(), TraceSource::Ranked(&r), &answer(), &cfg, &mut rng, None).has_cot)
            .count();
        let frac = gated as f64 / 10_000.0;
        assert!((0.94..=0.96).contains(&frac), "cot fraction {frac}");
    }

    #[test]
    fn strip_think_recovers_ungated_variant() {
        let cfg = PipelineConfig::default();
        let r = ranked();
        let gated = assemble_with_gate(&doc(), &question(), TraceSource::Ranked(&r), &answer(), &cfg, true, None);
        let ungated = assemble_with_gate(&doc(), &question(), TraceSource::Ranked(&r), &answer(), &cfg, false, None);
        let stripped = strip_think(&gated).unwrap();
        assert_eq!(stripped, ungated);
        assert_eq!(strip_think(&ungated).unwrap(), ungated);
    }

    #[test]
    fn v1_source_uses_all_pages() {
        let cfg = PipelineConfig::default();
        let records: Vec<EvidenceRecord> = (1..=3)
            .map(|p| EvidenceRecord {
                page_index: p,
                snippet: if p == 2 { "s".into() } else { String::new() },
                score: if p == 2 { 7.0 } else { 0.0 },
                was_clamped: false,
                is_source: p == 2,
                failed: false,
            })
            .collect();
        let ex = assemble_with_gate(
            &doc(),
            &question(),
            TraceSource::AllPages { records: &records, threshold: 1.0 },
            &answer(),
            &cfg,
            true,
            None,
        );
        assert_eq!(ex.trace_format, ExampleTrace::V1);
        assert!(ex.assistant.starts_with("<think>\nPage 1: irrelevant\nPage 2: s\nPage 3: irrelevant\n</think>"));
    }

    #[test]
    fn malformed_think_block() {
        let cfg = PipelineConfig::default();
        let r = ranked();
        let mut ex = assemble_with_gate(&doc(), &question(), TraceSource::Ranked(&r), &answer(), &cfg, true, None);
        ex.assistant = "<think>x".into();
        assert_eq!(strip_think(&ex).unwrap_err(), TraceError::MalformedThinkBlock);
        assert!(ex.validate().is_err());
    }
}
