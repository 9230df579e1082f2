use crate::extract::{EvidenceRecord, RankedEvidence};

/// Only line of a bounded trace when no evidence survived ranking.
pub const EMPTY_TRACE_SENTINEL: &str = "No relevant pages found.";
pub const IRRELEVANT_MARKER: &str = "irrelevant";

fn think_block(lines: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from("<think>\n");
    let mut first = true;
    for line in lines {
        if !first {
            out.push('\n');
        }
        out.push_str(&line);
        first = false;
    }
    out.push_str("\n</think>");
    out
}

/// Bounded trace: one `Page X: <snippet>` line per ranked entry, most
/// relevant first.
pub fn render_trace_v2(ranked: &RankedEvidence) -> String {
    if ranked.is_empty() {
        return think_block([EMPTY_TRACE_SENTINEL.to_string()]);
    }
    think_block(ranked.entries().iter().map(|e| format!("Page {}: {}", e.page_index, e.snippet)))
}

/// Sequential-scan trace: every page in document order, pages below the
/// threshold marked `irrelevant`.
pub fn render_trace_v1(records: &[EvidenceRecord], threshold: f64) -> String {
    think_block(records.iter().map(|r| {
        if r.score >= threshold {
            format!("Page {}: {}", r.page_index, r.snippet)
        } else {
            format!("Page {}: {IRRELEVANT_MARKER}", r.page_index)
        }
    }))
}

/// Lines between `<think>\n` and `\n</think>` at the start of `assistant`.
pub fn think_block_lines(assistant: &str) -> Option<Vec<&str>> {
    let body = assistant.strip_prefix("<think>\n")?;
    let end = body.find("\n</think>")?;
    Some(body[..end].split('\n').collect())
}
