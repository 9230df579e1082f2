use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{ScoreTable, TableError};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("benchmark {0} has no score among the normalization models")]
    EmptyColumn(String),
    #[error("benchmark {0} has a non-positive maximum")]
    NonPositiveMax(String),
    #[error("model {model} has no score for {benchmark}")]
    MissingScore { model: String, benchmark: String },
    #[error("unknown base model {0}")]
    UnknownBase(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("unknown benchmark {0}")]
    UnknownBenchmark(String),
    #[error("runs do not share the same models and benchmarks")]
    AxisMismatch,
    #[error("need at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("invalid aggregate config: {0}")]
    InvalidConfig(String),
}

impl From<TableError> for StatsError {
    fn from(e: TableError) -> Self {
        StatsError::InvalidConfig(e.to_string())
    }
}

/// How the two MMLongBench context-length columns enter the aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmlbCombine {
    /// Both columns count as separate benchmarks.
    #[default]
    Separate,
    /// The columns are averaged into one benchmark before normalization.
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregateConfig {
    pub va_benchmarks: Vec<String>,
    pub lca_benchmarks: Vec<String>,
    /// Models whose scores define the per-benchmark maxima. Empty means all.
    pub normalization_models: Vec<String>,
    pub mmlb_combine: MmlbCombine,
    /// The two MMLongBench columns and the name of their average.
    pub mmlb_columns: [String; 2],
    pub mmlb_combined_name: String,
}

impl Default for AggregateConfig {
    /// Convention calibrated on reference scores: MMLongBench 128K
    /// and 32K as separate columns, maxima over every model in the table.
    fn default() -> Self {
        let va: Vec<String> =
            ["MMLBD", "MMLBD-C", "MMLB 128K", "MMLB 32K", "SlideVQA", "DUDE"].map(String::from).to_vec();
        let mut lca = va.clone();
        lca.extend(["Helmet", "LongBench v2"].map(String::from));
        Self {
            va_benchmarks: va,
            lca_benchmarks: lca,
            normalization_models: Vec::new(),
            mmlb_combine: MmlbCombine::Separate,
            mmlb_columns: ["MMLB 128K".into(), "MMLB 32K".into()],
            mmlb_combined_name: "MMLongBench".into(),
        }
    }
}

impl AggregateConfig {
    fn resolve_names(&self, names: &[String]) -> Vec<String> {
        if self.mmlb_combine == MmlbCombine::Separate {
            return names.to_vec();
        }
        let mut out = Vec::new();
        for n in names {
            let name = if self.mmlb_columns.contains(n) { &self.mmlb_combined_name } else { n };
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.va_benchmarks.is_empty() {
            return Err(StatsError::InvalidConfig("empty VA benchmark list".into()));
        }
        if let Some(b) = self.va_benchmarks.iter().find(|b| !self.lca_benchmarks.contains(b)) {
            return Err(StatsError::InvalidConfig(format!("VA benchmark {b} is not in the LCA set")));
        }
        Ok(())
    }
}

/// Applies `mmlb_combine`: with `averaged`, the two MMLongBench columns are
/// replaced by their mean (missing if either is missing).
fn combine(table: &ScoreTable, cfg: &AggregateConfig) -> Result<ScoreTable, StatsError> {
    if cfg.mmlb_combine == MmlbCombine::Separate {
        return Ok(table.clone());
    }
    let idx: Vec<usize> = cfg
        .mmlb_columns
        .iter()
        .map(|c| table.benchmark_index(c).ok_or_else(|| StatsError::UnknownBenchmark(c.clone())))
        .collect::<Result<_, _>>()?;
    let mut benchmarks = Vec::new();
    let mut keep = Vec::new();
    for (j, b) in table.benchmarks().iter().enumerate() {
        if j == idx[0] {
            benchmarks.push(cfg.mmlb_combined_name.clone());
            keep.push(None);
        } else if j != idx[1] {
            benchmarks.push(b.clone());
            keep.push(Some(j));
        }
    }
    let rows = table
        .rows()
        .iter()
        .map(|row| {
            keep.iter()
                .map(|k| match k {
                    Some(j) => row[*j],
                    None => Some((row[idx[0]]? + row[idx[1]]?) / 2.0),
                })
                .collect()
        })
        .collect();
    Ok(ScoreTable::new(table.models().to_vec(), benchmarks, rows)?)
}

/// `score / max * 100` per benchmark (the column maximum maps to exactly 100), maxima over `normalization_models`
/// (all models when the list is empty). Column combination is not applied
/// here.
pub fn normalize_scores(table: &ScoreTable, cfg: &AggregateConfig) -> Result<ScoreTable, StatsError> {
    let norm_rows: Vec<usize> = if cfg.normalization_models.is_empty() {
        (0..table.models().len()).collect()
    } else {
        cfg.normalization_models
            .iter()
            .map(|m| table.model_index(m).ok_or_else(|| StatsError::UnknownModel(m.clone())))
            .collect::<Result<_, _>>()?
    };
    let mut maxima = Vec::with_capacity(table.benchmarks().len());
    for (j, b) in table.benchmarks().iter().enumerate() {
        let max = norm_rows
            .iter()
            .filter_map(|&i| table.rows()[i][j])
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .ok_or_else(|| StatsError::EmptyColumn(b.clone()))?;
        if max <= 0.0 {
            return Err(StatsError::NonPositiveMax(b.clone()));
        }
        maxima.push(max);
    }
    let rows = table
        .rows()
        .iter()
        .map(|row| row.iter().zip(&maxima).map(|(v, m)| v.map(|v| v / m * 100.0)).collect())
        .collect();
    Ok(ScoreTable::new(table.models().to_vec(), table.benchmarks().to_vec(), rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelAggregate {
    pub model: String,
    pub va: f64,
    pub lca: f64,
}

fn mean_over(norm: &ScoreTable, row: usize, names: &[String]) -> Result<f64, StatsError> {
    let mut sum = 0.0;
    for name in names {
        let j = norm.benchmark_index(name).ok_or_else(|| StatsError::UnknownBenchmark(name.clone()))?;
        sum += norm.rows()[row][j].ok_or_else(|| StatsError::MissingScore {
            model: norm.models()[row].clone(),
            benchmark: name.clone(),
        })?;
    }
    Ok(sum / names.len() as f64)
}

/// VA and LCA for every model.
pub fn aggregate(table: &ScoreTable, cfg: &AggregateConfig) -> Result<Vec<ModelAggregate>, StatsError> {
    cfg.validate()?;
    let combined = combine(table, cfg)?;
    let norm = normalize_scores(&combined, cfg)?;
    let va = cfg.resolve_names(&cfg.va_benchmarks);
    let lca = cfg.resolve_names(&cfg.lca_benchmarks);
    (0..norm.models().len())
        .map(|i| {
            Ok(ModelAggregate {
                model: norm.models()[i].clone(),
                va: mean_over(&norm, i, &va)?,
                lca: mean_over(&norm, i, &lca)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaTable {
    pub base: String,
    pub models: Vec<String>,
    pub benchmarks: Vec<String>,
    pub deltas: Vec<Vec<Option<f64>>>,
}

impl DeltaTable {
    pub fn get(&self, model: &str, benchmark: &str) -> Option<f64> {
        let i = self.models.iter().position(|m| m == model)?;
        let j = self.benchmarks.iter().position(|b| b == benchmark)?;
        self.deltas[i][j]
    }
}

/// `score[m][b] - score[base][b]` on raw scores.
pub fn deltas(table: &ScoreTable, base_model: &str) -> Result<DeltaTable, StatsError> {
    let b = table.model_index(base_model).ok_or_else(|| StatsError::UnknownBase(base_model.to_string()))?;
    let base = &table.rows()[b];
    let deltas = table
        .rows()
        .iter()
        .map(|row| row.iter().zip(base).map(|(v, bv)| Some(v.as_ref()? - bv.as_ref()?)).collect())
        .collect();
    Ok(DeltaTable {
        base: base_model.to_string(),
        models: table.models().to_vec(),
        benchmarks: table.benchmarks().to_vec(),
        deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateDelta {
    pub model: String,
    pub va: f64,
    pub lca: f64,
}

pub fn aggregate_deltas(aggs: &[ModelAggregate], base_model: &str) -> Result<Vec<AggregateDelta>, StatsError> {
    let base = aggs
        .iter()
        .find(|a| a.model == base_model)
        .ok_or_else(|| StatsError::UnknownBase(base_model.to_string()))?;
    Ok(aggs
        .iter()
        .map(|a| AggregateDelta { model: a.model.clone(), va: a.va - base.va, lca: a.lca - base.lca })
        .collect())
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Population standard deviation per model and column across runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunVariance {
    pub runs: usize,
    /// model -> column -> σ; columns with any missing run are left out.
    pub sigma: BTreeMap<String, BTreeMap<String, f64>>,
}

impl RunVariance {
    pub fn get(&self, model: &str, column: &str) -> Option<f64> {
        self.sigma.get(model)?.get(column).copied()
    }
}

fn check_runs(tables: &[ScoreTable]) -> Result<(), StatsError> {
    if tables.len() < 2 {
        return Err(StatsError::TooFewRuns(tables.len()));
    }
    let first = &tables[0];
    if tables[1..].iter().any(|t| t.models() != first.models() || t.benchmarks() != first.benchmarks()) {
        return Err(StatsError::AxisMismatch);
    }
    Ok(())
}

/// σ of every column of repeated evaluations over identical axes. Tables
/// that already carry VA/LCA columns get their σ this way too.
pub fn run_variance(tables: &[ScoreTable]) -> Result<RunVariance, StatsError> {
    check_runs(tables)?;
    let first = &tables[0];
    let mut sigma = BTreeMap::new();
    for (i, model) in first.models().iter().enumerate() {
        let mut per = BTreeMap::new();
        for (j, bench) in first.benchmarks().iter().enumerate() {
            let values: Option<Vec<f64>> = tables.iter().map(|t| t.rows()[i][j]).collect();
            if let Some(values) = values {
                per.insert(bench.clone(), population_std(&values));
            }
        }
        sigma.insert(model.clone(), per);
    }
    Ok(RunVariance { runs: tables.len(), sigma })
}

/// Computes VA/LCA for each run from raw columns, then σ per model.
pub fn run_aggregate_variance(tables: &[ScoreTable], cfg: &AggregateConfig) -> Result<RunVariance, StatsError> {
    check_runs(tables)?;
    let per_run: Vec<Vec<ModelAggregate>> = tables.iter().map(|t| aggregate(t, cfg)).collect::<Result<_, _>>()?;
    let mut sigma = BTreeMap::new();
    for (i, model) in tables[0].models().iter().enumerate() {
        let va: Vec<f64> = per_run.iter().map(|r| r[i].va).collect();
        let lca: Vec<f64> = per_run.iter().map(|r| r[i].lca).collect();
        sigma.insert(
            model.clone(),
            BTreeMap::from([("VA".to_string(), population_std(&va)), ("LCA".to_string(), population_std(&lca))]),
        );
    }
    Ok(RunVariance { runs: tables.len(), sigma })
}
