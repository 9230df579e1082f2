//! One document through every stage: questions, extraction, ranking,
//! branch choice, teacher answer and example assembly.

use std::ops::AddAssign;
use std::path::Path;

use serde::Serialize;

use crate::answer::{build_text_branch_request, build_visual_branch_request, choose_branch, AnswerRecord, Branch};
use crate::backend::{complete_batch, ChatBackend, ChatRequest, RetryPolicy};
use crate::config::{PipelineConfig, TraceFormat};
use crate::document::{DocumentRef, Question};
use crate::extract::{extract_document, rank_and_select, EvidenceRecord, RankedEvidence};
use crate::prompts::PromptTemplates;
use crate::qgen::{build_question_request, draw_spec, question_from_response, sample_source_pages, QgenError};
use crate::rng::derived;
use crate::tracegen::{assemble_example, TraceSource, TrainingExample};

/// Purpose tags for per-question RNG streams.
const STREAM_SPEC: u64 = 0;
const STREAM_BRANCH: u64 = 1;
const STREAM_GATE: u64 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub documents: usize,
    pub questions_requested: usize,
    pub questions: usize,
    pub extractions: usize,
    pub extraction_failures: usize,
    pub answers: usize,
    pub examples: usize,
    pub failures: usize,
}

impl StageCounts {
    /// Failed questions over requested questions.
    pub fn failure_rate(&self) -> f64 {
        if self.questions_requested == 0 {
            0.0
        } else {
            self.failures as f64 / self.questions_requested as f64
        }
    }
}

impl AddAssign for StageCounts {
    fn add_assign(&mut self, o: Self) {
        self.documents += o.documents;
        self.questions_requested += o.questions_requested;
        self.questions += o.questions;
        self.extractions += o.extractions;
        self.extraction_failures += o.extraction_failures;
        self.answers += o.answers;
        self.examples += o.examples;
        self.failures += o.failures;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageError {
    pub doc_id: String,
    pub question: usize,
    pub stage: &'static str,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct QuestionOutcome {
    pub question: Question,
    pub records: Vec<EvidenceRecord>,
    pub ranked: RankedEvidence,
    pub branch: Branch,
    pub answer_request: ChatRequest,
    pub example: Option<TrainingExample>,
}

#[derive(Debug, Clone)]
pub struct DocumentOutcome {
    pub doc_id: String,
    pub outcomes: Vec<QuestionOutcome>,
    pub counts: StageCounts,
    pub errors: Vec<StageError>,
}

impl DocumentOutcome {
    pub fn examples(&self) -> impl Iterator<Item = &TrainingExample> {
        self.outcomes.iter().filter_map(|o| o.example.as_ref())
    }
}

pub struct PipelineContext<'a, B: ?Sized> {
    pub cfg: &'a PipelineConfig,
    pub templates: &'a PromptTemplates,
    pub backend: &'a B,
    pub policy: &'a RetryPolicy,
    /// Image paths in examples are written relative to this directory.
    pub image_root: Option<&'a Path>,
}

/// Runs `questions` questions over `doc`. Randomness comes only from
/// `cfg.rng_seed`, `doc_index` and the question index, so results do not
/// depend on scheduling.
pub fn run_document<B: ChatBackend + ?Sized>(
    doc: &DocumentRef,
    doc_index: u64,
    questions: usize,
    ctx: &PipelineContext<'_, B>,
) -> DocumentOutcome {
    let cfg = ctx.cfg;
    let mut counts = StageCounts { documents: 1, questions_requested: questions, ..StageCounts::default() };
    let mut errors = Vec::new();
    let mut fail = |q: usize, stage: &'static str, message: String, counts: &mut StageCounts| {
        tracing::warn!(doc = doc.doc_id(), question = q, stage, %message, "question dropped");
        counts.failures += 1;
        errors.push(StageError { doc_id: doc.doc_id().to_string(), question: q, stage, message });
    };

    // Question generation, batched across the document's questions.
    let mut planned = Vec::with_capacity(questions);
    for q in 0..questions {
        let mut rng = derived(cfg.rng_seed, &[doc_index, q as u64, STREAM_SPEC]);
        let spec = draw_spec(doc.page_count(), cfg, &mut rng);
        let built = sample_source_pages(doc.page_count(), &spec, &mut rng).and_then(|pages| {
            let req = build_question_request(doc, &pages, &spec, cfg, ctx.templates)?;
            Ok((pages, spec, req))
        });
        match built {
            Ok(p) => planned.push((q, p)),
            Err(e) => fail(q, "question", e.to_string(), &mut counts),
        }
    }
    let requests: Vec<ChatRequest> = planned.iter().map(|(_, (_, _, r))| r.clone()).collect();
    let responses = complete_batch(ctx.backend, &requests, ctx.policy);

    let mut pending = Vec::new();
    for ((q, (pages, spec, _)), response) in planned.into_iter().zip(responses) {
        let question = response
            .map_err(QgenError::from)
            .and_then(|r| question_from_response(&r, &pages, &spec))
            .and_then(|question| {
                question.check_against(doc.page_count())?;
                Ok(question)
            });
        let question = match question {
            Ok(question) => question,
            Err(e) => {
                fail(q, "question", e.to_string(), &mut counts);
                continue;
            }
        };
        counts.questions += 1;

        let records = extract_document(doc, &question, cfg, ctx.templates, ctx.backend, ctx.policy);
        counts.extractions += records.len();
        counts.extraction_failures += records.iter().filter(|r| r.failed).count();
        let ranked = rank_and_select(&records, cfg);

        let mut branch = choose_branch(&mut derived(cfg.rng_seed, &[doc_index, q as u64, STREAM_BRANCH]), cfg.text_branch_ratio);
        if branch == Branch::Text && ranked.is_empty() {
            branch = Branch::Visual;
        }
        let request = match branch {
            Branch::Visual => build_visual_branch_request(doc, &ranked, &question, cfg, ctx.templates),
            Branch::Text => build_text_branch_request(&ranked, &question, cfg, ctx.templates),
        };
        match request {
            Ok(answer_request) => pending.push((q, question, records, ranked, branch, answer_request)),
            Err(e) => fail(q, "answer", e.to_string(), &mut counts),
        }
    }

    // Teacher answers, batched across questions.
    let answer_requests: Vec<ChatRequest> = pending.iter().map(|p| p.5.clone()).collect();
    let answers = complete_batch(ctx.backend, &answer_requests, ctx.policy);
    let mut outcomes = Vec::with_capacity(pending.len());
    for ((q, question, records, ranked, branch, answer_request), response) in pending.into_iter().zip(answers) {
        let record = response.map_err(|e| e.to_string()).and_then(|r| {
            let pages = match branch {
                Branch::Visual => answer_request.images().map(|p| p.index).collect(),
                Branch::Text => Vec::new(),
            };
            AnswerRecord::new(&r.text, branch, answer_request.model_id(), pages).map_err(|e| e.to_string())
        });
        let example = match record {
            Ok(answer) => {
                counts.answers += 1;
                let trace = match cfg.trace_format {
                    TraceFormat::V2 => TraceSource::Ranked(&ranked),
                    TraceFormat::V1 => TraceSource::AllPages { records: &records, threshold: cfg.relevance_threshold },
                };
                let mut rng = derived(cfg.rng_seed, &[doc_index, q as u64, STREAM_GATE]);
                counts.examples += 1;
                Some(assemble_example(doc, &question, trace, &answer, cfg, &mut rng, ctx.image_root))
            }
            Err(message) => {
                fail(q, "answer", message, &mut counts);
                None
            }
        };
        outcomes.push(QuestionOutcome { question, records, ranked, branch, answer_request, example });
    }

    DocumentOutcome { doc_id: doc.doc_id().to_string(), outcomes, counts, errors }
}
