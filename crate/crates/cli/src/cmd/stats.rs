//! `pagetrace stats --responses responses.jsonl`
//!
//! One JSON object per line with the response `text` and its `tokens`
//! (`completion_tokens` is accepted too).

use std::fs::File;
use std::path::PathBuf;

use clap::Args;
use pagetrace_core::tracegen::read_jsonl;
use pagetrace_evalstats::{length_stats, mean_ratio, LengthStats};
use serde::{Deserialize, Serialize};

use super::{print_json, runtime};
use crate::{CliError, EXIT_OK};

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Write the token-length histogram as CSV.
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
    /// Second response file; reports mean(responses) / mean(baseline).
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Deserialize)]
pub struct Response {
    pub text: String,
    #[serde(alias = "completion_tokens")]
    pub tokens: u64,
}

#[derive(Debug, Serialize)]
pub struct StatsReport {
    #[serde(flatten)]
    pub stats: LengthStats,
    pub baseline_mean_tokens: Option<f64>,
    pub mean_ratio: Option<f64>,
}

fn load(path: &PathBuf) -> Result<Vec<(String, u64)>, CliError> {
    let rows: Vec<Response> = read_jsonl(path).map_err(runtime(path.display()))?;
    Ok(rows.into_iter().map(|r| (r.text, r.tokens)).collect())
}

pub fn compute(args: &StatsArgs) -> Result<StatsReport, CliError> {
    if args.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let stats = length_stats(&load(&args.responses)?, args.bins);
    let (baseline_mean_tokens, ratio) = match &args.baseline {
        Some(path) => {
            let base = length_stats(&load(path)?, 1);
            (Some(base.mean_tokens), mean_ratio(stats.mean_tokens, base.mean_tokens))
        }
        None => (None, None),
    };
    Ok(StatsReport { stats, baseline_mean_tokens, mean_ratio: ratio })
}

pub fn run(args: &StatsArgs) -> Result<i32, CliError> {
    let report = compute(args)?;
    if let Some(path) = &args.histogram_csv {
        let f = File::create(path).map_err(runtime(path.display()))?;
        report.stats.histogram.write_csv(f).map_err(runtime(path.display()))?;
    }
    if args.json {
        print_json(&report)?;
    } else {
        let s = &report.stats;
        println!("responses      {}", s.count);
        println!("mean tokens    {:.1}", s.mean_tokens);
        println!("median tokens  {:.1}", s.median);
        println!("think fraction {:.4}", s.think_fraction);
        if let Some(r) = report.mean_ratio {
            println!("mean ratio     {r:.2}");
        }
    }
    Ok(EXIT_OK)
}
