use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::dtype::{AccumDtype, Dtype};
use crate::kernel::{merge_chunk, Execution};
use crate::store::{StoreError, TensorReader, TensorStore, INDEX_FILE};

const SHARD_EXT: &str = "safetensors";
const DEFAULT_CHUNK_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Incompatibility {
    MissingKey { name: String },
    ExtraKey { name: String },
    ShapeMismatch { name: String, base: Vec<usize>, tuned: Vec<usize> },
    DtypeMismatch { name: String, base: Dtype, tuned: Dtype },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompatibilityReport {
    pub issues: Vec<Incompatibility>,
}

impl CompatibilityReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Lists every key, shape and dtype difference between two manifests.
pub fn validate_compatibility(base: &TensorStore, tuned: &TensorStore) -> CompatibilityReport {
    let mut issues = Vec::new();
    for (name, b) in base.tensors() {
        match tuned.get(name) {
            None => issues.push(Incompatibility::MissingKey { name: name.clone() }),
            Some(t) => {
                if b.shape != t.shape {
                    issues.push(Incompatibility::ShapeMismatch {
                        name: name.clone(),
                        base: b.shape.clone(),
                        tuned: t.shape.clone(),
                    });
                }
                if b.dtype != t.dtype {
                    issues.push(Incompatibility::DtypeMismatch { name: name.clone(), base: b.dtype, tuned: t.dtype });
                }
            }
        }
    }
    for name in tuned.tensors().keys().filter(|n| base.get(n).is_none()) {
        issues.push(Incompatibility::ExtraKey { name: name.clone() });
    }
    CompatibilityReport { issues }
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("step {step}: stores are incompatible ({} issues)", report.issues.len())]
    IncompatibleStores { step: usize, report: CompatibilityReport },
    #[error("step {step}: alpha {alpha} is not finite")]
    NonFiniteAlpha { step: usize, alpha: f64 },
    #[error("a merge plan needs at least one step")]
    EmptyPlan,
    #[error("output directory {0} is one of the inputs")]
    OutputIsInput(PathBuf),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MergeError + '_ {
    move |source| MergeError::Io { path: path.to_path_buf(), source }
}

pub struct MergeStep {
    pub tuned: TensorStore,
    pub alpha: f64,
}

/// Ordered `(tuned, alpha)` steps applied to a base.
pub struct MergePlan {
    steps: Vec<MergeStep>,
}

impl MergePlan {
    pub fn new(steps: Vec<MergeStep>) -> Result<Self, MergeError> {
        if steps.is_empty() {
            return Err(MergeError::EmptyPlan);
        }
        Ok(Self { steps })
    }

    pub fn single(tuned: TensorStore, alpha: f64) -> Self {
        Self { steps: vec![MergeStep { tuned, alpha }] }
    }

    pub fn steps(&self) -> &[MergeStep] {
        &self.steps
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MergeOptions {
    /// Overrides the per-dtype accumulation default.
    pub accum: Option<AccumDtype>,
    pub exec: Execution,
    pub chunk_bytes: usize,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self { accum: None, exec: Execution::default(), chunk_bytes: DEFAULT_CHUNK_BYTES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeReport {
    pub out_dir: PathBuf,
    pub alphas: Vec<f64>,
    pub tensors: usize,
    pub merged_tensors: usize,
    pub copied_tensors: usize,
    pub shards: usize,
    pub bytes_written: u64,
    pub largest_tensor_bytes: u64,
}

/// `base + alpha * (tuned - base)` for every floating-point tensor.
pub fn task_arithmetic_merge(
    base: &TensorStore,
    tuned: TensorStore,
    alpha: f64,
    out: &Path,
    opts: &MergeOptions,
) -> Result<MergeReport, MergeError> {
    apply_merge_plan(base, &MergePlan::single(tuned, alpha), out, opts)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Folds every step of `plan` over `base` in one streaming pass, casting to
/// the source dtype after each step. The output mirrors the base layout:
/// shard headers, index file and non-tensor files are copied verbatim.
pub fn apply_merge_plan(
    base: &TensorStore,
    plan: &MergePlan,
    out: &Path,
    opts: &MergeOptions,
) -> Result<MergeReport, MergeError> {
    for (step, s) in plan.steps().iter().enumerate() {
        if !s.alpha.is_finite() {
            return Err(MergeError::NonFiniteAlpha { step, alpha: s.alpha });
        }
        if !(0.0..=1.0).contains(&s.alpha) {
            tracing::warn!(step, alpha = s.alpha, "alpha outside [0, 1] extrapolates the task vector");
        }
        let report = validate_compatibility(base, &s.tuned);
        if !report.is_ok() {
            return Err(MergeError::IncompatibleStores { step, report });
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    if same_dir(out, base.root()) || plan.steps().iter().any(|s| same_dir(out, s.tuned.root())) {
        return Err(MergeError::OutputIsInput(out.to_path_buf()));
    }

    copy_side_files(base.root(), out)?;

    let alphas: Vec<f64> = plan.steps().iter().map(|s| s.alpha).collect();
    let mut report = MergeReport {
        out_dir: out.to_path_buf(),
        alphas: alphas.clone(),
        tensors: base.total_tensors(),
        merged_tensors: 0,
        copied_tensors: 0,
        shards: base.shards().len(),
        bytes_written: 0,
        largest_tensor_bytes: base.largest_tensor_bytes(),
    };

    for shard in base.shards() {
        let in_path = base.shard_path(&shard.file);
        let out_path = out.join(&shard.file);
        let mut input = File::open(&in_path).map_err(io_err(&in_path))?;
        let mut output = BufWriter::with_capacity(1 << 20, File::create(&out_path).map_err(io_err(&out_path))?);
        let mut cursor = 0u64;
        let copy_to = |input: &mut File, output: &mut BufWriter<File>, cursor: &mut u64, end: u64| -> Result<(), MergeError> {
            let n = io::copy(&mut Read::by_ref(input).take(end - *cursor), output).map_err(io_err(&out_path))?;
            if n != end - *cursor {
                return Err(MergeError::Io {
                    path: in_path.clone(),
                    source: io::Error::new(io::ErrorKind::UnexpectedEof, "shard shorter than its header"),
                });
            }
            *cursor = end;
            Ok(())
        };
        // Header bytes and any gaps between tensors are copied as-is.
        copy_to(&mut input, &mut output, &mut cursor, shard.data_start)?;

        for info in base.shard_tensors(&shard.file) {
            copy_to(&mut input, &mut output, &mut cursor, info.offset)?;
            if !info.dtype.is_mergeable() {
                tracing::debug!(tensor = %info.name, dtype = %info.dtype, "copying non-float tensor from base");
                copy_to(&mut input, &mut output, &mut cursor, info.offset + info.len)?;
                report.copied_tensors += 1;
                continue;
            }
            let accum = opts.accum.unwrap_or(info.dtype.default_accum());
            let mut readers: Vec<TensorReader> = plan
                .steps()
                .iter()
                .map(|s| TensorReader::open(&s.tuned, s.tuned.get(&info.name).expect("validated key")))
                .collect::<Result<_, _>>()?;
            let elem = info.dtype.size();
            let chunk = (opts.chunk_bytes.max(elem) / elem) * elem;
            let first = chunk.min(info.len as usize);
            let mut base_buf = vec![0u8; first];
            let mut tuned_bufs: Vec<Vec<u8>> = readers.iter().map(|_| vec![0u8; first]).collect();
            let mut out_buf = vec![0u8; first];
            let mut left = info.len;
            while left > 0 {
                let n = (chunk as u64).min(left) as usize;
                input.read_exact(&mut base_buf[..n]).map_err(io_err(&in_path))?;
                for (r, buf) in readers.iter_mut().zip(tuned_bufs.iter_mut()) {
                    r.read_exact(&mut buf[..n])?;
                }
                let tuned: Vec<&[u8]> = tuned_bufs.iter().map(|b| &b[..n]).collect();
                merge_chunk(info.dtype, accum, &base_buf[..n], &tuned, &alphas, &mut out_buf[..n], opts.exec);
                output.write_all(&out_buf[..n]).map_err(io_err(&out_path))?;
                left -= n as u64;
            }
            cursor += info.len;
            report.merged_tensors += 1;
        }
        copy_to(&mut input, &mut output, &mut cursor, shard.file_len)?;
        output.flush().map_err(io_err(&out_path))?;
        report.bytes_written += shard.file_len;
    }
    Ok(report)
}

/// Copies config, tokenizer and index files from the base directory.
fn copy_side_files(from: &Path, to: &Path) -> Result<(), MergeError> {
    for entry in fs::read_dir(from).map_err(io_err(from))? {
        let path = entry.map_err(io_err(from))?.path();
        if !path.is_file() || path.extension().is_some_and(|e| e == SHARD_EXT) {
            continue;
        }
        let name = path.file_name().expect("file has a name");
        if name != INDEX_FILE {
            tracing::debug!(file = %path.display(), "copying side file from base");
        }
        fs::copy(&path, to.join(name)).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Peak resident set size of this process, from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
