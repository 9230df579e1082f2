use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Shape(String),
    #[error("row {row}, column {column}: {value:?} is not a number")]
    BadScore { row: usize, column: String, value: String },
}

/// Models × benchmarks, scores on a 0–100 scale, `None` where missing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    models: Vec<String>,
    benchmarks: Vec<String>,
    scores: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(models: Vec<String>, benchmarks: Vec<String>, scores: Vec<Vec<Option<f64>>>) -> Result<Self, TableError> {
        if scores.len() != models.len() {
            return Err(TableError::Shape(format!("{} models but {} rows", models.len(), scores.len())));
        }
        if let Some((i, row)) = scores.iter().enumerate().find(|(_, r)| r.len() != benchmarks.len()) {
            return Err(TableError::Shape(format!("row {} has {} scores for {} benchmarks", models[i], row.len(), benchmarks.len())));
        }
        if scores.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(TableError::Shape("non-finite score".into()));
        }
        for names in [&models, &benchmarks] {
            let mut sorted: Vec<&String> = names.iter().collect();
            sorted.sort();
            if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
                return Err(TableError::Shape(format!("duplicate name {}", w[0])));
            }
        }
        Ok(Self { models, benchmarks, scores })
    }

    /// First column holds model names; the header names the benchmarks.
    /// Blank cells are missing scores.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(TableError::Shape("need a model column and at least one benchmark".into()));
        }
        let benchmarks: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut models = Vec::new();
        let mut scores = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            models.push(record[0].to_string());
            let mut row = Vec::with_capacity(benchmarks.len());
            for (j, cell) in record.iter().skip(1).enumerate() {
                row.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| TableError::BadScore {
                        row: i + 1,
                        column: benchmarks[j].clone(),
                        value: cell.to_string(),
                    })?)
                });
            }
            scores.push(row);
        }
        Self::new(models, benchmarks, scores)
    }

    pub fn read_csv(path: &Path) -> Result<Self, TableError> {
        Self::from_csv(std::fs::File::open(path).map_err(csv::Error::from)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["model".to_string()];
        header.extend(self.benchmarks.iter().cloned());
        w.write_record(&header)?;
        for (m, row) in self.models.iter().zip(&self.scores) {
            let mut rec = vec![m.clone()];
            rec.extend(row.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn benchmarks(&self) -> &[String] {
        &self.benchmarks
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.scores
    }

    pub fn model_index(&self, model: &str) -> Option<usize> {
        self.models.iter().position(|m| m == model)
    }

    pub fn benchmark_index(&self, benchmark: &str) -> Option<usize> {
        self.benchmarks.iter().position(|b| b == benchmark)
    }

    pub fn get(&self, model: &str, benchmark: &str) -> Option<f64> {
        self.scores[self.model_index(model)?][self.benchmark_index(benchmark)?]
    }

    /// Aligned plain-text rendering, blanks for missing scores.
    pub fn render_text(&self, decimals: usize) -> String {
        let cells: Vec<Vec<String>> = self
            .scores
            .iter()
            .map(|r| r.iter().map(|v| v.map(|v| format!("{v:.decimals$}")).unwrap_or_default()).collect())
            .collect();
        let name_w = self.models.iter().map(String::len).max().unwrap_or(0).max(5);
        let widths: Vec<usize> = self
            .benchmarks
            .iter()
            .enumerate()
            .map(|(j, b)| cells.iter().map(|r| r[j].len()).max().unwrap_or(0).max(b.len()))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "model");
        for (b, w) in self.benchmarks.iter().zip(&widths) {
            let _ = write!(out, "  {b:>w$}");
        }
        out.push('\n');
        for (m, row) in self.models.iter().zip(&cells) {
            let _ = write!(out, "{m:<name_w$}");
            for (c, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
