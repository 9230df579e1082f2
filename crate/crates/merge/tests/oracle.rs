//! Merges checked against a scalar loop over an independently parsed copy
//! of the stores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use half::f16;
use pagetrace_merge::store::{write_index, write_safetensors, TensorSpec};
use pagetrace_merge::{apply_merge_plan, task_arithmetic_merge, Dtype, MergeOptions, MergePlan, MergeStep, TensorStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimal whole-file reader: name -> (dtype, raw bytes).
fn parse_all(dir: &Path) -> BTreeMap<String, (String, Vec<u8>)> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map_or(true, |e| e != "safetensors") {
            continue;
        }
        let bytes = fs::read(&path).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        let data = &bytes[8 + n..];
        for (name, v) in header.as_object().unwrap() {
            if name == "__metadata__" {
                continue;
            }
            let s = v["data_offsets"][0].as_u64().unwrap() as usize;
            let e = v["data_offsets"][1].as_u64().unwrap() as usize;
            out.insert(name.clone(), (v["dtype"].as_str().unwrap().to_string(), data[s..e].to_vec()));
        }
    }
    out
}

fn to_f16(b: &[u8]) -> Vec<f16> {
    b.chunks_exact(2).map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]]))).collect()
}

fn to_f32(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Random sharded 16-bit store: two shards, a few tensors, one integer buffer.
fn random_f16_store(dir: &Path, seed: u64, like: Option<&Path>) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = [("embed", vec![64, 32]), ("layer.0.w", vec![32, 32]), ("layer.1.w", vec![32, 48]), ("head", vec![17])];
    let mut map = BTreeMap::new();
    let mut shard_items: [Vec<(TensorSpec, Vec<u8>)>; 2] = [Vec::new(), Vec::new()];
    for (i, (name, shape)) in layout.iter().enumerate() {
        let n: usize = shape.iter().product();
        let data: Vec<u8> = (0..n).flat_map(|_| f16::from_f32(rng.random_range(-4.0f32..4.0)).to_le_bytes()).collect();
        shard_items[i % 2].push((TensorSpec::new(*name, Dtype::F16, shape), data));
    }
    // Integer buffers must survive unchanged, so every store uses the same one
    // unless it is derived from another.
    let ids: Vec<u8> = match like {
        Some(other) => parse_all(other)["position_ids"].1.clone(),
        None => (0..16i64).flat_map(|v| v.to_le_bytes()).collect(),
    };
    shard_items[1].push((TensorSpec::new("position_ids", Dtype::I64, &[16]), ids));
    let mut total = 0;
    for (s, items) in shard_items.iter().enumerate() {
        let file = format!("model-0000{}-of-00002.safetensors", s + 1);
        for (spec, data) in items {
            map.insert(spec.name.clone(), file.clone());
            total += data.len() as u64;
        }
        write_safetensors(&dir.join(&file), items).unwrap();
    }
    write_index(dir, &map, total).unwrap();
    fs::write(dir.join("config.json"), format!("{{\"seed\":{seed}}}")).unwrap();
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

#[test]
fn alpha_zero_and_one_are_bit_exact() {
    let d = tempfile::tempdir().unwrap();
    let (b, t) = (d.path().join("base"), d.path().join("tuned"));
    random_f16_store(&b, 1, None);
    random_f16_store(&t, 2, Some(&b));
    let base = TensorStore::open(&b).unwrap();

    task_arithmetic_merge(&base, TensorStore::open(&t).unwrap(), 0.0, &d.path().join("a0"), &MergeOptions::default()).unwrap();
    assert_eq!(files(&d.path().join("a0")), files(&b));

    task_arithmetic_merge(&base, TensorStore::open(&t).unwrap(), 1.0, &d.path().join("a1"), &MergeOptions::default()).unwrap();
    let merged = parse_all(&d.path().join("a1"));
    let tuned = parse_all(&t);
    assert_eq!(merged, tuned);
    // Layout and side files come from the base.
    assert_eq!(fs::read(d.path().join("a1/config.json")).unwrap(), fs::read(b.join("config.json")).unwrap());
}

#[test]
fn quarter_alpha_matches_scalar_oracle() {
    let d = tempfile::tempdir().unwrap();
    let (b, t) = (d.path().join("base"), d.path().join("tuned"));
    random_f16_store(&b, 11, None);
    random_f16_store(&t, 12, Some(&b));
    let out = d.path().join("out");
    let opts = MergeOptions { chunk_bytes: 1000, ..MergeOptions::default() };
    task_arithmetic_merge(&TensorStore::open(&b).unwrap(), TensorStore::open(&t).unwrap(), 0.25, &out, &opts).unwrap();

    let (base, tuned, merged) = (parse_all(&b), parse_all(&t), parse_all(&out));
    assert_eq!(merged.keys().collect::<Vec<_>>(), base.keys().collect::<Vec<_>>());
    let mut worst = 0.0f64;
    for (name, (dtype, bytes)) in &merged {
        assert_eq!(dtype, &base[name].0);
        if dtype != "F16" {
            assert_eq!(bytes, &base[name].1);
            continue;
        }
        let (bv, tv, mv) = (to_f16(&base[name].1), to_f16(&tuned[name].1), to_f16(bytes));
        for i in 0..bv.len() {
            let (x, y) = (bv[i].to_f32(), tv[i].to_f32());
            let expect = f16::from_f32(x + 0.25 * (y - x)).to_f64();
            let got = mv[i].to_f64();
            let rel = (got - expect).abs() / expect.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(if got == expect { 0.0 } else { rel });
        }
    }
    assert!(worst <= 1e-6, "worst relative error {worst}");
}

fn f32_store(dir: &Path, values: &[f32]) -> TensorStore {
    fs::create_dir_all(dir).unwrap();
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_safetensors(&dir.join("model.safetensors"), &[(TensorSpec::new("w", Dtype::F32, &[values.len()]), bytes)]).unwrap();
    TensorStore::open(dir).unwrap()
}

fn read_w(dir: &Path) -> Vec<f32> {
    to_f32(&parse_all(dir)["w"].1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn composition_closed_form(
        pairs in prop::collection::vec((-100.0f32..100.0, -100.0f32..100.0), 1..64),
        alpha in 0.0f64..1.0,
        beta in 0.0f64..1.0,
    ) {
        let d = tempfile::tempdir().unwrap();
        let b: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let t: Vec<f32> = pairs.iter().map(|p| p.1).collect();
        let base = f32_store(&d.path().join("b"), &b);
        f32_store(&d.path().join("t"), &t);
        let opts = MergeOptions::default();
        task_arithmetic_merge(&base, TensorStore::open(&d.path().join("t")).unwrap(), alpha, &d.path().join("m1"), &opts).unwrap();
        let m1 = TensorStore::open(&d.path().join("m1")).unwrap();
        task_arithmetic_merge(&m1, TensorStore::open(&d.path().join("t")).unwrap(), beta, &d.path().join("m2"), &opts).unwrap();
        let got = read_w(&d.path().join("m2"));
        let k = alpha + beta * (1.0 - alpha);
        for i in 0..b.len() {
            let (x, y) = (b[i] as f64, t[i] as f64);
            let want = x + k * (y - x);
            let scale = x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
            prop_assert!((got[i] as f64 - want).abs() / scale <= 1e-6, "{} vs {}", got[i], want);
        }
    }

    #[test]
    fn tuned_equal_to_base_is_identity(values in prop::collection::vec(-1e6f32..1e6, 1..64), alpha in -2.0f64..3.0) {
        let d = tempfile::tempdir().unwrap();
        let base = f32_store(&d.path().join("b"), &values);
        let tuned = f32_store(&d.path().join("t"), &values);
        task_arithmetic_merge(&base, tuned, alpha, &d.path().join("m"), &MergeOptions::default()).unwrap();
        prop_assert_eq!(read_w(&d.path().join("m")), values);
    }

    #[test]
    fn f32_merge_is_exact_against_f64_loop(
        pairs in prop::collection::vec((-1e3f32..1e3, -1e3f32..1e3), 1..64),
        alpha in -0.5f64..1.5,
    ) {
        let d = tempfile::tempdir().unwrap();
        let b: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let t: Vec<f32> = pairs.iter().map(|p| p.1).collect();
        let base = f32_store(&d.path().join("b"), &b);
        let tuned = f32_store(&d.path().join("t"), &t);
        task_arithmetic_merge(&base, tuned, alpha, &d.path().join("m"), &MergeOptions::default()).unwrap();
        let got = read_w(&d.path().join("m"));
        for i in 0..b.len() {
            let want = if alpha == 0.0 || b[i] == t[i] { b[i] } else {
                let x = b[i] as f64;
                (x + alpha * (t[i] as f64 - x)) as f32
            };
            prop_assert_eq!(got[i].to_bits(), want.to_bits());
        }
    }
}

#[test]
fn two_step_plan_equals_two_merges() {
    let d = tempfile::tempdir().unwrap();
    let (b, c, s) = (d.path().join("base"), d.path().join("cpt"), d.path().join("sft"));
    random_f16_store(&b, 21, None);
    random_f16_store(&c, 22, Some(&b));
    random_f16_store(&s, 23, Some(&b));
    let base = TensorStore::open(&b).unwrap();
    let plan = MergePlan::new(vec![
        MergeStep { tuned: TensorStore::open(&c).unwrap(), alpha: 0.25 },
        MergeStep { tuned: TensorStore::open(&s).unwrap(), alpha: 0.5 },
    ])
    .unwrap();
    apply_merge_plan(&base, &plan, &d.path().join("plan"), &MergeOptions::default()).unwrap();
    task_arithmetic_merge(&base, TensorStore::open(&c).unwrap(), 0.25, &d.path().join("step1"), &MergeOptions::default()).unwrap();
    let step1 = TensorStore::open(&d.path().join("step1")).unwrap();
    task_arithmetic_merge(&step1, TensorStore::open(&s).unwrap(), 0.5, &d.path().join("step2"), &MergeOptions::default()).unwrap();
    assert_eq!(files(&d.path().join("plan")), files(&d.path().join("step2")));
}
