//! `pagetrace eval-agg --scores table.csv [--base MODEL] [--runs r1.csv --runs r2.csv ...]`
//!
//! Score CSVs have the model name in the first column and one benchmark per
//! remaining column; blank cells are missing scores.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use pagetrace_evalstats::{
    aggregate, aggregate_deltas, deltas, run_aggregate_variance, run_variance, AggregateConfig, AggregateDelta,
    DeltaTable, ModelAggregate, RunVariance, ScoreTable,
};
use serde::Serialize;

use super::{print_json, runtime};
use crate::{CliError, EXIT_OK};

#[derive(Debug, Args)]
pub struct EvalAggArgs {
    /// Raw benchmark scores.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Aggregation settings (TOML); the built-in defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model the deltas are taken against.
    #[arg(long)]
    pub base: Option<String>,
    /// Repeated evaluations with identical axes, for run-to-run σ.
    #[arg(long)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub decimals: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Default, Serialize)]
pub struct EvalReport {
    pub aggregates: Option<Vec<ModelAggregate>>,
    pub deltas: Option<DeltaTable>,
    pub aggregate_deltas: Option<Vec<AggregateDelta>>,
    pub run_variance: Option<RunVariance>,
    /// σ of VA/LCA recomputed per run; present when the runs carry raw columns.
    pub run_aggregate_variance: Option<RunVariance>,
}

fn load_config(args: &EvalAggArgs) -> Result<AggregateConfig, CliError> {
    let Some(path) = &args.config else { return Ok(AggregateConfig::default()) };
    let text = fs::read_to_string(path).map_err(runtime(path.display()))?;
    let cfg: AggregateConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    cfg.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn read_table(path: &PathBuf) -> Result<ScoreTable, CliError> {
    ScoreTable::read_csv(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn evaluate(args: &EvalAggArgs) -> Result<EvalReport, CliError> {
    if args.scores.is_none() && args.runs.is_empty() {
        return Err(CliError::Usage("give --scores, --runs or both".into()));
    }
    let cfg = load_config(args)?;
    let stats = |e: pagetrace_evalstats::StatsError| CliError::Runtime(e.to_string());
    let mut report = EvalReport::default();
    if let Some(path) = &args.scores {
        let table = read_table(path)?;
        let aggs = aggregate(&table, &cfg).map_err(stats)?;
        if let Some(base) = &args.base {
            report.deltas = Some(deltas(&table, base).map_err(stats)?);
            report.aggregate_deltas = Some(aggregate_deltas(&aggs, base).map_err(stats)?);
        }
        report.aggregates = Some(aggs);
    } else if args.base.is_some() {
        return Err(CliError::Usage("--base needs --scores".into()));
    }
    if !args.runs.is_empty() {
        let tables = args.runs.iter().map(read_table).collect::<Result<Vec<_>, _>>()?;
        report.run_variance = Some(run_variance(&tables).map_err(stats)?);
        report.run_aggregate_variance = run_aggregate_variance(&tables, &cfg).ok();
    }
    Ok(report)
}

fn print_text(report: &EvalReport, decimals: usize) {
    if let Some(aggs) = &report.aggregates {
        println!("model\tVA\tLCA");
        for a in aggs {
            println!("{}\t{:.d$}\t{:.d$}", a.model, a.va, a.lca, d = decimals);
        }
    }
    if let Some(ds) = &report.aggregate_deltas {
        println!();
        println!("delta vs base\tVA\tLCA");
        for a in ds {
            println!("{}\t{:+.d$}\t{:+.d$}", a.model, a.va, a.lca, d = decimals);
        }
    }
    for (title, rv) in [("run sigma", &report.run_variance), ("aggregate run sigma", &report.run_aggregate_variance)] {
        let Some(rv) = rv else { continue };
        println!();
        println!("{title} over {} runs", rv.runs);
        for (model, cols) in &rv.sigma {
            let cells: Vec<String> = cols.iter().map(|(c, s)| format!("{c}={s:.d$}", d = decimals)).collect();
            println!("{model}\t{}", cells.join("\t"));
        }
    }
}

pub fn run(args: &EvalAggArgs) -> Result<i32, CliError> {
    let report = evaluate(args)?;
    if args.json {
        print_json(&report)?;
    } else {
        print_text(&report, args.decimals.unwrap_or(2));
    }
    Ok(EXIT_OK)
}
