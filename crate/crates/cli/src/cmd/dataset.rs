//! `pagetrace build-dataset --spec mix.toml --out train.jsonl`
//!
//! ```toml
//! seed = 3
//! total = 70000
//!
//! [[source]]
//! name = "luth"
//! [[source.part]]
//! name = "math"
//! path = "luth/math.jsonl"
//! proportion = 0.4
//!
//! [[source]]
//! name = "docvqa"
//! path = "generated.jsonl"
//! count = 10000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use pagetrace_core::rng::seeded;
use pagetrace_core::tracegen::{dataset_report, mix_datasets, strip_think, DatasetReport, MixSpec, TrainingExample};
use serde::Serialize;
use std::collections::BTreeMap;

use super::{print_json, runtime, write_json};
use crate::{CliError, EXIT_OK};

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Mix spec (TOML). Relative source paths resolve against its directory.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the summary JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Remove think blocks from every training example in the output.
    #[arg(long)]
    pub no_think: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary {
    pub out: PathBuf,
    pub seed: u64,
    pub lines: usize,
    pub counts: BTreeMap<String, usize>,
    /// Lines that parsed as training examples; other formats pass through.
    pub examples: usize,
    pub report: DatasetReport,
}

pub fn build(args: &BuildDatasetArgs) -> Result<DatasetSummary, CliError> {
    let text = fs::read_to_string(&args.spec).map_err(runtime(args.spec.display()))?;
    let spec = MixSpec::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", args.spec.display())))?;
    spec.source_counts().map_err(|e| CliError::Config(format!("{}: {e}", args.spec.display())))?;
    let base = args.spec.parent().unwrap_or(Path::new(""));
    let mut rng = seeded(spec.seed);
    let mut mixed = mix_datasets(&spec, base, &mut rng).map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut examples = Vec::new();
    for line in &mut mixed.lines {
        let Ok(ex) = serde_json::from_str::<TrainingExample>(&line.line) else { continue };
        let ex = if args.no_think {
            let stripped = strip_think(&ex).map_err(runtime(format!("example {}", ex.doc_id)))?;
            line.line = serde_json::to_string(&stripped).map_err(runtime("serialize"))?;
            stripped
        } else {
            ex
        };
        examples.push(ex);
    }

    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent).map_err(runtime(parent.display()))?;
    }
    mixed.write_to(&args.out).map_err(runtime(args.out.display()))?;
    Ok(DatasetSummary {
        out: args.out.clone(),
        seed: spec.seed,
        lines: mixed.lines.len(),
        counts: mixed.counts,
        examples: examples.len(),
        report: dataset_report(&examples),
    })
}

pub fn run(args: &BuildDatasetArgs) -> Result<i32, CliError> {
    let summary = build(args)?;
    if let Some(path) = &args.report {
        write_json(path, &summary)?;
    }
    if args.json {
        print_json(&summary)?;
    } else {
        println!("{} lines -> {}", summary.lines, summary.out.display());
        for (k, v) in &summary.counts {
            println!("  {k}: {v}");
        }
    }
    Ok(EXIT_OK)
}
