use std::collections::BTreeMap;

use serde::Serialize;

use super::example::TrainingExample;
use super::trace::think_block_lines;
use crate::answer::Branch;

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Midpoint median for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetReport {
    pub count: usize,
    pub pages_mean: Option<f64>,
    pub pages_median: Option<f64>,
    pub cot_fraction: f64,
    pub visual_fraction: f64,
    pub text_fraction: f64,
    /// Trace line count -> number of gated examples.
    pub trace_lines_histogram: BTreeMap<usize, usize>,
}

pub fn dataset_report<'a>(examples: impl IntoIterator<Item = &'a TrainingExample>) -> DatasetReport {
    let mut pages = Vec::new();
    let (mut cot, mut visual, mut text) = (0usize, 0usize, 0usize);
    let mut hist = BTreeMap::new();
    for ex in examples {
        pages.push(ex.page_count() as f64);
        if ex.has_cot {
            cot += 1;
            if let Some(lines) = think_block_lines(&ex.assistant) {
                *hist.entry(lines.len()).or_insert(0) += 1;
            }
        }
        match ex.branch {
            Branch::Visual => visual += 1,
            Branch::Text => text += 1,
        }
    }
    let count = pages.len();
    let frac = |k: usize| if count == 0 { 0.0 } else { k as f64 / count as f64 };
    DatasetReport {
        count,
        pages_mean: mean(&pages),
        pages_median: median(&pages),
        cot_fraction: frac(cot),
        visual_fraction: frac(visual),
        text_fraction: frac(text),
        trace_lines_histogram: hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracegen::{ExampleTrace, UserPart};

    fn ex(pages: u32, cot: bool) -> TrainingExample {
        let mut user: Vec<UserPart> = (1..=pages)
            .flat_map(|p| {
                [UserPart::Text { text: format!("Page {p}:") }, UserPart::Image { path: format!("p{p}.png") }]
            })
            .collect();
        user.push(UserPart::Text { text: "q".into() });
        TrainingExample {
            doc_id: "d".into(),
            system: if cot { "s <cot>".into() } else { "s".into() },
            user,
            assistant: if cot { "<think>\nPage 1: a\nPage 2: b\n</think>\nA".into() } else { "A".into() },
            has_cot: cot,
            branch: if pages % 2 == 0 { Branch::Text } else { Branch::Visual },
            trace_format: if cot { ExampleTrace::V2 } else { ExampleTrace::None },
        }
    }

    #[test]
    fn page_mean_median() {
        let set = [ex(10, true), ex(20, true), ex(30, true)];
        let r = dataset_report(&set);
        assert_eq!(r.pages_mean, Some(20.0));
        assert_eq!(r.pages_median, Some(20.0));
        let set = [ex(1, true), ex(2, true), ex(100, true)];
        let r = dataset_report(&set);
        assert!((r.pages_mean.unwrap() - 34.33).abs() < 0.005);
        assert_eq!(r.pages_median, Some(2.0));
    }

    #[test]
    fn cot_fraction_counts() {
        let set: Vec<_> = (0..100).map(|i| ex(1, i < 95)).collect();
        let r = dataset_report(&set);
        assert_eq!(r.cot_fraction, 0.95);
        assert_eq!(r.trace_lines_histogram[&2], 95);
        assert_eq!(r.visual_fraction, 1.0);
    }

    #[test]
    fn empty_dataset() {
        let r = dataset_report(&[]);
        assert_eq!(r.count, 0);
        assert_eq!(r.pages_mean, None);
        assert_eq!(r.cot_fraction, 0.0);
    }

    #[test]
    fn even_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }
}
