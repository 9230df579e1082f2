//! Prompt templates.
//!
//! Every template is plain text with `{name}` placeholders. The built-in
//! defaults can be replaced file by file from a directory:
//!
//! | file | placeholders |
//! |---|---|
//! | `extract_system.txt` | |
//! | `extract.txt` | `{question}` `{page_index}` `{score_min}` `{score_max}` `{source_instruction}` |
//! | `extract_source.txt` | `{source_floor}` `{score_max}` |
//! | `answer_visual.txt` | `{question}` |
//! | `answer_text.txt` | `{question}` |
//! | `question.txt` | `{question_type}` `{page_list}` |
//! | `question_<type>.txt` | as `question.txt`, for one question type |

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

/// Text the extraction prompt always contains; the response grammar keyword.
pub const EXTRACTION_FORMAT_MARKER: &str = "RELEVANCE:";
/// Phrase present only when a page is flagged as a question source page.
pub const SOURCE_PAGE_MARKER: &str = "source pages the question was written from";

const EXTRACT_SYSTEM: &str = "You read one page of a long document and judge how useful it is for answering a question.";

const EXTRACT: &str = "\
Question: {question}

This is page {page_index} of the document.{source_instruction}

Extract every piece of content on this page that helps answer the question, including descriptions of relevant charts, figures or tables. Then rate how relevant the page is to the question on a scale from {score_min} to {score_max}.

Respond in exactly this format:
RELEVANCE: <number between {score_min} and {score_max}>
EVIDENCE: <the extracted evidence, or nothing if the page is irrelevant>";

const EXTRACT_SOURCE: &str = " This page is one of the source pages the question was written from. Give it a relevance score between {source_floor} and {score_max}.";

const ANSWER_VISUAL: &str = "Answer the question using the document pages above.\nQuestion: {question}";

const ANSWER_TEXT: &str = "Answer the question using the evidence above.\nQuestion: {question}";

const QUESTION: &str = "\
Write one {question_type} question about the document pages shown ({page_list}). The question must be answerable from these pages. Reply with the question only.";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub extract_system: String,
    pub extract: String,
    pub extract_source: String,
    pub answer_visual: String,
    pub answer_text: String,
    pub question: String,
    pub question_by_type: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            extract_system: EXTRACT_SYSTEM.into(),
            extract: EXTRACT.into(),
            extract_source: EXTRACT_SOURCE.into(),
            answer_visual: ANSWER_VISUAL.into(),
            answer_text: ANSWER_TEXT.into(),
            question: QUESTION.into(),
            question_by_type: BTreeMap::new(),
        }
    }
}

impl PromptTemplates {
    /// Defaults overridden by whichever template files exist in `dir`.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut t = Self::default();
        let read = |name: &str, slot: &mut String| -> io::Result<()> {
            let path = dir.join(name);
            if path.is_file() {
                *slot = fs::read_to_string(path)?.trim_end().to_string();
            }
            Ok(())
        };
        read("extract_system.txt", &mut t.extract_system)?;
        read("extract.txt", &mut t.extract)?;
        read("extract_source.txt", &mut t.extract_source)?;
        read("answer_visual.txt", &mut t.answer_visual)?;
        read("answer_text.txt", &mut t.answer_text)?;
        read("question.txt", &mut t.question)?;
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(kind) = name.strip_prefix("question_").and_then(|n| n.strip_suffix(".txt")) {
                let text = fs::read_to_string(entry.path())?;
                t.question_by_type.insert(kind.to_string(), text.trim_end().to_string());
            }
        }
        Ok(t)
    }

    pub fn question_template(&self, question_type: &str) -> &str {
        self.question_by_type.get(question_type).unwrap_or(&self.question)
    }
}

/// Substitutes `{key}` placeholders. Unknown placeholders are left as is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Scores are shown with one decimal in prompts.
pub fn fmt_score(v: f64) -> String {
    format!("{v:.1}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_replaces_known_keys() {
        assert_eq!(render("a {x} b {y} {z}", &[("x", "1"), ("y", "2")]), "a 1 b 2 {z}");
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::TempDir::new().unwrap();
        fs::write(dir.path().join("answer_text.txt"), "Just answer: {question}\n").unwrap();
        fs::write(dir.path().join("question_math.txt"), "Math please").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.answer_text, "Just answer: {question}");
        assert_eq!(t.answer_visual, ANSWER_VISUAL);
        assert_eq!(t.question_template("math"), "Math please");
        assert_eq!(t.question_template("reasoning"), QUESTION);
    }

    #[test]
    fn default_extraction_prompt_names_the_grammar() {
        assert!(EXTRACT.contains(EXTRACTION_FORMAT_MARKER));
        assert!(EXTRACT.contains("EVIDENCE:"));
        assert!(EXTRACT_SOURCE.contains(SOURCE_PAGE_MARKER));
    }
}
