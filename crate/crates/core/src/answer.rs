//! Answer generation: the visual branch sees the top-ranked page images, the
//! text branch sees only the ranked evidence snippets.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatMessage, ChatRequest, Part};
use crate::config::PipelineConfig;
use crate::document::{DocumentRef, Question};
use crate::extract::RankedEvidence;
use crate::prompts::{render, PromptTemplates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Visual,
    Text,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Visual => "visual",
            Branch::Text => "text",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnswerError {
    #[error("ranked evidence is empty; route the example to the visual branch")]
    NoEvidence,
    #[error("answer text is empty")]
    EmptyAnswer,
    #[error("answer text contains a think tag")]
    ThinkTagInAnswer,
    #[error("text-branch answers cannot reference input pages")]
    TextBranchWithPages,
    #[error("page {0} is not in the document")]
    InvalidPage(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    text: String,
    branch: Branch,
    teacher_model: String,
    input_page_indices: Vec<u32>,
}

impl AnswerRecord {
    /// Trims the text and checks the record invariants.
    pub fn new(
        text: &str,
        branch: Branch,
        teacher_model: impl Into<String>,
        input_page_indices: Vec<u32>,
    ) -> Result<Self, AnswerError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(AnswerError::EmptyAnswer);
        }
        if text.contains("<think>") || text.contains("</think>") {
            return Err(AnswerError::ThinkTagInAnswer);
        }
        if branch == Branch::Text && !input_page_indices.is_empty() {
            return Err(AnswerError::TextBranchWithPages);
        }
        Ok(Self { text: text.to_string(), branch, teacher_model: teacher_model.into(), input_page_indices })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn teacher_model(&self) -> &str {
        &self.teacher_model
    }

    pub fn input_page_indices(&self) -> &[u32] {
        &self.input_page_indices
    }
}

/// Text branch with probability `text_ratio`, visual otherwise.
pub fn choose_branch(rng: &mut impl Rng, text_ratio: f64) -> Branch {
    if rng.random::<f64>() < text_ratio {
        Branch::Text
    } else {
        Branch::Visual
    }
}

/// Pages shown to the visual teacher, ascending. Falls back to the
/// question's source pages when nothing survived ranking.
pub fn visual_pages(ranked: &RankedEvidence, question: &Question) -> Vec<u32> {
    let pages: BTreeSet<u32> = if ranked.is_empty() {
        question.source_pages.clone()
    } else {
        ranked.page_indices().collect()
    };
    pages.into_iter().collect()
}

pub fn build_visual_branch_request(
    doc: &DocumentRef,
    ranked: &RankedEvidence,
    question: &Question,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
) -> Result<ChatRequest, AnswerError> {
    let pages = visual_pages(ranked, question);
    let mut parts = Vec::with_capacity(pages.len() * 2 + 1);
    for p in pages {
        let page = doc.page(p).ok_or(AnswerError::InvalidPage(p))?;
        parts.push(Part::Text(format!("Page {p}:")));
        parts.push(Part::Image(page.clone()));
    }
    parts.push(Part::Text(render(&templates.answer_visual, &[("question", &question.text)])));
    Ok(ChatRequest::new(
        cfg.visual_teacher_model.clone(),
        vec![ChatMessage::user(parts)],
        cfg.answer_max_tokens,
        cfg.answer_temperature,
    )
    .expect("visual request is well formed"))
}

/// `Page X: <snippet>` lines in ranked order.
pub fn evidence_body(ranked: &RankedEvidence) -> String {
    ranked
        .entries()
        .iter()
        .map(|e| format!("Page {}: {}", e.page_index, e.snippet))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_text_branch_request(
    ranked: &RankedEvidence,
    question: &Question,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
) -> Result<ChatRequest, AnswerError> {
    if ranked.is_empty() {
        return Err(AnswerError::NoEvidence);
    }
    let parts = vec![
        Part::Text(evidence_body(ranked)),
        Part::Text(render(&templates.answer_text, &[("question", &question.text)])),
    ];
    Ok(ChatRequest::new(
        cfg.text_teacher_model.clone(),
        vec![ChatMessage::user(parts)],
        cfg.answer_max_tokens,
        cfg.answer_temperature,
    )
    .expect("text request is well formed"))
}
