use std::io::Write;

use serde::Serialize;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// True when `text` contains `<think>` followed later by `</think>`.
pub fn has_think_block(text: &str) -> bool {
    text.find(THINK_OPEN)
        .is_some_and(|i| text[i + THINK_OPEN.len()..].contains(THINK_CLOSE))
}

/// Equal-width bins over `[min, max]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        if values.is_empty() {
            return Self { edges: Vec::new(), counts: Vec::new() };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Self { edges: vec![lo, hi], counts: vec![values.len()] };
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }

    /// `bin_start,bin_end,count` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_start", "bin_end", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthStats {
    pub count: usize,
    pub mean_tokens: f64,
    pub median: f64,
    pub histogram: Histogram,
    pub think_fraction: f64,
}

/// Statistics over `(response text, completion token count)` pairs.
pub fn length_stats<S: AsRef<str>>(responses: &[(S, u64)], bins: usize) -> LengthStats {
    let count = responses.len();
    if count == 0 {
        return LengthStats {
            count,
            mean_tokens: 0.0,
            median: 0.0,
            histogram: Histogram::build(&[], bins),
            think_fraction: 0.0,
        };
    }
    let mut tokens: Vec<f64> = responses.iter().map(|(_, t)| *t as f64).collect();
    let mean_tokens = tokens.iter().sum::<f64>() / count as f64;
    let histogram = Histogram::build(&tokens, bins);
    tokens.sort_by(f64::total_cmp);
    let median = if count % 2 == 1 { tokens[count / 2] } else { (tokens[count / 2 - 1] + tokens[count / 2]) / 2.0 };
    let thinking = responses.iter().filter(|(text, _)| has_think_block(text.as_ref())).count();
    LengthStats { count, mean_tokens, median, histogram, think_fraction: thinking as f64 / count as f64 }
}

/// `numerator / denominator` of two mean lengths, e.g. explicit over implicit
/// reasoning.
pub fn mean_ratio(numerator: f64, denominator: f64) -> Option<f64> {
    (denominator > 0.0).then(|| numerator / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_median() {
        let s = length_stats(&[("a", 10), ("b", 20), ("c", 30)], 4);
        assert_eq!(s.mean_tokens, 20.0);
        assert_eq!(s.median, 20.0);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 3);
    }

    #[test]
    fn think_blocks_must_close() {
        assert!(has_think_block("<think>x</think> y"));
        assert!(has_think_block("pre <think></think>"));
        assert!(!has_think_block("<think>never closed"));
        assert!(!has_think_block("</think><think>"));
        assert!(!has_think_block("plain"));
    }

    #[test]
    fn think_fraction_counts_responses() {
        let responses: Vec<(String, u64)> = (0..100)
            .map(|i| (if i < 77 { format!("<think>r{i}</think>a") } else { "a".to_string() }, 5))
            .collect();
        assert_eq!(length_stats(&responses, 10).think_fraction, 0.77);
    }

    #[test]
    fn histogram_edges_and_csv() {
        let h = Histogram::build(&[0.0, 1.0, 2.0, 10.0], 5);
        assert_eq!(h.edges, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(h.counts, vec![2, 1, 0, 0, 1]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_start,bin_end,count\n0,2,2\n"));
        let flat = Histogram::build(&[3.0, 3.0], 5);
        assert_eq!(flat.counts, vec![2]);
    }

    #[test]
    fn ratio() {
        assert_eq!(mean_ratio(1.0, 0.0), None);
        assert!((mean_ratio(1637.0, 132.0).unwrap() - 12.4015).abs() < 1e-4);
    }
}
