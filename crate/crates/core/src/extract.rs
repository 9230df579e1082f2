//! Per-page evidence extraction and relevance ranking.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{complete_batch, ChatBackend, ChatMessage, ChatRequest, ChatResponse, Part, RetryPolicy};
use crate::config::PipelineConfig;
use crate::document::{DocumentRef, PageImage, Question};
use crate::prompts::{fmt_score, render, PromptTemplates};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExtractError {
    #[error("no parsable RELEVANCE line in extractor output")]
    UnparseableScore,
    #[error("relevance {0} is above threshold but the evidence is empty")]
    MissingEvidence(f64),
    #[error("ranked evidence violates its invariants: {0}")]
    InvalidRanking(String),
}

/// One page's extracted snippet and relevance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub page_index: u32,
    pub snippet: String,
    pub score: f64,
    pub was_clamped: bool,
    pub is_source: bool,
    /// The extractor could not produce a usable answer; the record was
    /// degraded to the minimum score with an empty snippet.
    #[serde(default)]
    pub failed: bool,
}

impl EvidenceRecord {
    pub fn degraded(page_index: u32, is_source: bool, cfg: &PipelineConfig) -> Self {
        Self {
            page_index,
            snippet: String::new(),
            score: 0.0_f64.clamp(cfg.score_min, cfg.score_max),
            was_clamped: false,
            is_source,
            failed: true,
        }
    }
}

/// Threshold-filtered, relevance-sorted, top-K evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEvidence {
    entries: Vec<EvidenceRecord>,
    k_limit: usize,
    threshold: f64,
}

/// Ranking order: score descending, then page index ascending.
pub fn rank_order(a: &EvidenceRecord, b: &EvidenceRecord) -> Ordering {
    b.score.total_cmp(&a.score).then(a.page_index.cmp(&b.page_index))
}

impl RankedEvidence {
    /// Checks length, ordering, threshold and uniqueness invariants.
    pub fn new(entries: Vec<EvidenceRecord>, k_limit: usize, threshold: f64) -> Result<Self, ExtractError> {
        if k_limit == 0 {
            return Err(ExtractError::InvalidRanking("k_limit must be positive".into()));
        }
        if entries.len() > k_limit {
            return Err(ExtractError::InvalidRanking(format!(
                "{} entries exceed k_limit {k_limit}",
                entries.len()
            )));
        }
        if let Some(e) = entries.iter().find(|e| !(e.score >= threshold)) {
            return Err(ExtractError::InvalidRanking(format!(
                "page {} scores {} below threshold {threshold}",
                e.page_index, e.score
            )));
        }
        if entries.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(ExtractError::InvalidRanking("scores are not non-increasing".into()));
        }
        let mut pages: Vec<u32> = entries.iter().map(|e| e.page_index).collect();
        pages.sort_unstable();
        if pages.windows(2).any(|w| w[0] == w[1]) {
            return Err(ExtractError::InvalidRanking("duplicate page index".into()));
        }
        Ok(Self { entries, k_limit, threshold })
    }

    pub fn empty(k_limit: usize, threshold: f64) -> Self {
        Self { entries: Vec::new(), k_limit, threshold }
    }

    pub fn entries(&self) -> &[EvidenceRecord] {
        &self.entries
    }

    pub fn k_limit(&self) -> usize {
        self.k_limit
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn page_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.page_index)
    }
}

/// Filter by threshold, sort by (score desc, page asc), keep the first `top_k`.
/// Records must have unique page indices.
pub fn rank_and_select(records: &[EvidenceRecord], cfg: &PipelineConfig) -> RankedEvidence {
    let mut kept: Vec<EvidenceRecord> = records
        .iter()
        .filter(|r| r.score >= cfg.relevance_threshold)
        .cloned()
        .collect();
    kept.sort_by(rank_order);
    kept.truncate(cfg.top_k);
    debug_assert!(RankedEvidence::new(kept.clone(), cfg.top_k, cfg.relevance_threshold).is_ok());
    RankedEvidence { entries: kept, k_limit: cfg.top_k, threshold: cfg.relevance_threshold }
}

pub fn build_extraction_prompt(
    page: &PageImage,
    question: &Question,
    is_source: bool,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
) -> ChatRequest {
    let score_max = fmt_score(cfg.score_max);
    let source_instruction = if is_source {
        render(&templates.extract_source, &[
            ("source_floor", &fmt_score(cfg.source_score_floor)),
            ("score_max", &score_max),
        ])
    } else {
        String::new()
    };
    let prompt = render(&templates.extract, &[
        ("question", &question.text),
        ("page_index", &page.index.to_string()),
        ("score_min", &fmt_score(cfg.score_min)),
        ("score_max", &score_max),
        ("source_instruction", &source_instruction),
    ]);
    ChatRequest::new(
        cfg.extractor_model.clone(),
        vec![
            ChatMessage::system(templates.extract_system.clone()),
            ChatMessage::user(vec![Part::Image(page.clone()), Part::Text(prompt)]),
        ],
        cfg.extraction_max_tokens,
        cfg.extraction_temperature,
    )
    .expect("extraction request is well formed")
}

fn strip_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let line = line.trim_start();
    let head = line.get(..key.len())?;
    head.eq_ignore_ascii_case(key).then(|| &line[key.len()..])
}

fn parse_score(raw: &str) -> Option<f64> {
    let token = raw.split_whitespace().next()?;
    let token = token.split('/').next()?;
    let token = token.trim_end_matches(|c: char| !c.is_ascii_digit());
    let v: f64 = token.parse().ok()?;
    v.is_finite().then_some(v)
}

/// One line of text, think tags removed.
fn clean_snippet(raw: &str) -> String {
    let without_tags = raw.replace("<think>", " ").replace("</think>", " ");
    without_tags.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `RELEVANCE: <real>` followed by `EVIDENCE: <text to end>`.
pub fn parse_extraction(
    response: &ChatResponse,
    page_index: u32,
    is_source: bool,
    cfg: &PipelineConfig,
) -> Result<EvidenceRecord, ExtractError> {
    let lines: Vec<&str> = response.text.lines().collect();
    let (score_line, raw_score) = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| strip_key(l, "RELEVANCE:").map(|rest| (i, rest)))
        .ok_or(ExtractError::UnparseableScore)?;
    let raw_score = parse_score(raw_score).ok_or(ExtractError::UnparseableScore)?;

    let snippet = lines[score_line + 1..]
        .iter()
        .enumerate()
        .find_map(|(i, l)| strip_key(l, "EVIDENCE:").map(|rest| (score_line + 1 + i, rest)))
        .map(|(i, first)| {
            let mut text = first.to_string();
            for l in &lines[i + 1..] {
                text.push('\n');
                text.push_str(l);
            }
            clean_snippet(&text)
        })
        .unwrap_or_default();

    let score = raw_score.clamp(cfg.score_min, cfg.score_max);
    if snippet.is_empty() && score >= cfg.relevance_threshold {
        return Err(ExtractError::MissingEvidence(score));
    }
    Ok(EvidenceRecord { page_index, snippet, score, was_clamped: score != raw_score, is_source, failed: false })
}

/// Scores every page of `doc` for `question`.
///
/// Always returns one record per page in page order. Backend failures and
/// output that still fails to parse after one retry become degraded records.
pub fn extract_document<B: ChatBackend + ?Sized>(
    doc: &DocumentRef,
    question: &Question,
    cfg: &PipelineConfig,
    templates: &PromptTemplates,
    backend: &B,
    policy: &RetryPolicy,
) -> Vec<EvidenceRecord> {
    let requests: Vec<ChatRequest> = doc
        .pages()
        .iter()
        .map(|p| build_extraction_prompt(p, question, question.is_source(p.index), cfg, templates))
        .collect();
    let responses = complete_batch(backend, &requests, policy);

    let mut records: Vec<Option<EvidenceRecord>> = vec![None; requests.len()];
    let mut retry: Vec<usize> = Vec::new();
    for (i, result) in responses.into_iter().enumerate() {
        let page = &doc.pages()[i];
        let is_source = question.is_source(page.index);
        match result {
            Ok(resp) => match parse_extraction(&resp, page.index, is_source, cfg) {
                Ok(rec) => records[i] = Some(rec),
                Err(err) => {
                    tracing::debug!(doc = doc.doc_id(), page = page.index, %err, "retrying unparseable extraction");
                    retry.push(i);
                }
            },
            Err(err) => {
                tracing::warn!(doc = doc.doc_id(), page = page.index, %err, "extraction failed; page degraded");
                records[i] = Some(EvidenceRecord::degraded(page.index, is_source, cfg));
            }
        }
    }

    if !retry.is_empty() {
        let again: Vec<ChatRequest> = retry.iter().map(|&i| requests[i].clone()).collect();
        for (&i, result) in retry.iter().zip(complete_batch(backend, &again, policy)) {
            let page = &doc.pages()[i];
            let is_source = question.is_source(page.index);
            let parsed = result
                .ok()
                .and_then(|resp| parse_extraction(&resp, page.index, is_source, cfg).ok());
            records[i] = Some(parsed.unwrap_or_else(|| {
                tracing::warn!(doc = doc.doc_id(), page = page.index, "extraction unparseable twice; page degraded");
                EvidenceRecord::degraded(page.index, is_source, cfg)
            }));
        }
    }

    let records: Vec<EvidenceRecord> = records.into_iter().map(|r| r.expect("every page handled")).collect();
    for r in records.iter().filter(|r| r.is_source && !r.failed && r.score < cfg.source_score_floor) {
        tracing::info!(
            doc = doc.doc_id(),
            page = r.page_index,
            score = r.score,
            floor = cfg.source_score_floor,
            "source page scored below the guided floor"
        );
    }
    records
}
