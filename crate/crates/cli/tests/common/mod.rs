#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use half::f16;
use pagetrace_merge::store::{write_index, write_safetensors, TensorSpec};
use pagetrace_merge::Dtype;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pagetrace"));
    c.args(["--log-level", "error"]);
    c
}

pub fn pagetrace(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pagetrace")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// `root/<name>/page_NNNN.png` with distinct bytes per page.
pub fn make_docs(root: &Path, docs: &[(&str, u32)]) {
    for (name, pages) in docs {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 1..=*pages {
            fs::write(dir.join(format!("page_{i:04}.png")), format!("{name} page {i}")).unwrap();
        }
    }
}

/// Writes `docs/` and `gen.toml` under `dir` and returns the config path.
pub fn generate_setup(dir: &Path, docs: &[(&str, u32)], pipeline: &str, run: &str, backend: &str) -> PathBuf {
    make_docs(&dir.join("docs"), docs);
    let cfg = format!(
        "[pipeline]\n{pipeline}\n\n[run]\ndocuments_root = \"docs\"\noutput = \"out/train.jsonl\"\n{run}\n\n[backend]\nkind = \"scripted\"\n{backend}\n"
    );
    let path = dir.join("gen.toml");
    fs::write(&path, cfg).unwrap();
    path
}

pub fn f16_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| f16::from_f32(*v).to_le_bytes()).collect()
}

pub fn f16_values(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(2).map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32()).collect()
}

/// Sharded f16 checkpoint: `shards[i]` lists `(name, numel)` for shard `i`.
/// Values are drawn from `seed`; `offset` shifts every value.
pub fn write_f16_checkpoint(root: &Path, shards: &[Vec<(String, usize)>], seed: u64, offset: f32) {
    fs::create_dir_all(root).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weight_map = BTreeMap::new();
    let mut total = 0u64;
    let n = shards.len();
    for (i, tensors) in shards.iter().enumerate() {
        let file = format!("model-{:05}-of-{:05}.safetensors", i + 1, n);
        let data: Vec<(TensorSpec, Vec<u8>)> = tensors
            .iter()
            .map(|(name, numel)| {
                let values: Vec<f32> = (0..*numel).map(|_| rng.random_range(-1.0f32..1.0) + offset).collect();
                weight_map.insert(name.clone(), file.clone());
                total += *numel as u64 * 2;
                (TensorSpec::new(name.clone(), Dtype::F16, &[*numel]), f16_bytes(&values))
            })
            .collect();
        write_safetensors(&root.join(&file), &data).unwrap();
    }
    write_index(root, &weight_map, total).unwrap();
    fs::write(root.join("config.json"), "{\"model_type\": \"toy\"}\n").unwrap();
}
