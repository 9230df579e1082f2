//! `pagetrace merge --base B --tuned T --alpha 0.25 --out O`
//!
//! Repeat `--tuned`/`--alpha` pairs to fold several task vectors in one pass.

use std::path::PathBuf;

use clap::Args;
use pagetrace_merge::{
    apply_merge_plan, peak_rss_bytes, AccumDtype, Execution, MergeError, MergeOptions, MergePlan, MergeReport,
    MergeStep, TensorStore,
};
use serde::Serialize;

use super::{print_json, runtime};
use crate::{CliError, EXIT_OK, EXIT_RUNTIME};

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Base checkpoint directory.
    #[arg(long)]
    pub base: PathBuf,
    /// Fine-tuned checkpoint directory; one per `--alpha`.
    #[arg(long, required = true)]
    pub tuned: Vec<PathBuf>,
    #[arg(long, required = true, allow_negative_numbers = true)]
    pub alpha: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Accumulation precision (f32 or f64); defaults per source dtype.
    #[arg(long)]
    pub accum_dtype: Option<AccumDtype>,
    /// Single-threaded kernel.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Serialize)]
struct MergeSummary<'a> {
    #[serde(flatten)]
    report: &'a MergeReport,
    peak_rss_bytes: Option<u64>,
}

pub fn run(args: &MergeArgs) -> Result<i32, CliError> {
    if args.tuned.len() != args.alpha.len() {
        return Err(CliError::Usage(format!(
            "{} --tuned paths but {} --alpha values",
            args.tuned.len(),
            args.alpha.len()
        )));
    }
    let base = TensorStore::open(&args.base).map_err(runtime(args.base.display()))?;
    let steps = args
        .tuned
        .iter()
        .zip(&args.alpha)
        .map(|(path, &alpha)| {
            TensorStore::open(path).map(|tuned| MergeStep { tuned, alpha }).map_err(runtime(path.display()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let plan = MergePlan::new(steps).map_err(|e| CliError::Usage(e.to_string()))?;
    let opts = MergeOptions {
        accum: args.accum_dtype,
        exec: if args.sequential { Execution::Sequential } else { Execution::default() },
        ..MergeOptions::default()
    };
    let report = match apply_merge_plan(&base, &plan, &args.out, &opts) {
        Ok(r) => r,
        Err(MergeError::IncompatibleStores { step, report }) => {
            eprintln!("pagetrace merge: step {step} ({}) is incompatible with the base", args.tuned[step].display());
            print_json(&report)?;
            return Ok(EXIT_RUNTIME);
        }
        Err(e @ MergeError::NonFiniteAlpha { .. }) => return Err(CliError::Usage(e.to_string())),
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    let summary = MergeSummary { report: &report, peak_rss_bytes: peak_rss_bytes() };
    if args.json {
        print_json(&summary)?;
    } else {
        println!(
            "{} tensors ({} merged, {} copied) in {} shards -> {}",
            report.tensors,
            report.merged_tensors,
            report.copied_tensors,
            report.shards,
            report.out_dir.display()
        );
    }
    Ok(EXIT_OK)
}
