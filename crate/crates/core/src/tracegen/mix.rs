use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PROPORTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("source {name} has {available} lines, {requested} requested")]
    SourceTooSmall { name: String, available: usize, requested: usize },
    #[error("invalid mix spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("mix spec: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixPart {
    pub name: String,
    pub path: PathBuf,
    pub proportion: f64,
}

/// One dataset in the mix. Either a single `path`, or a list of parts drawn
/// by proportion. Sized by `count`, or by `proportion` of the spec total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSource {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default, rename = "part")]
    pub parts: Vec<MixPart>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub proportion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    #[serde(default, alias = "rng_seed")]
    pub seed: u64,
    #[serde(default)]
    pub total: Option<usize>,
    #[serde(rename = "source")]
    pub sources: Vec<MixSource>,
}

/// A line of the mixed output with its provenance. `line` is the source
/// text, untouched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedLine {
    pub source: String,
    pub part: Option<String>,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutput {
    pub lines: Vec<MixedLine>,
    /// Drawn counts keyed by `source` or `source/part`.
    pub counts: BTreeMap<String, usize>,
}

impl MixOutput {
    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = String::with_capacity(self.lines.iter().map(|l| l.line.len() + 1).sum());
        for l in &self.lines {
            buf.push_str(&l.line);
            buf.push('\n');
        }
        fs::write(path, buf)
    }
}

/// Largest-remainder apportionment of `total` by `weights`. Counts sum to
/// `total` exactly and each is within 1 of its exact quota. Ties go to the
/// earlier weight.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

impl MixSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, MixError> {
        Ok(toml::from_str(s)?)
    }

    /// Requested count per source.
    pub fn source_counts(&self) -> Result<Vec<usize>, MixError> {
        if self.sources.is_empty() {
            return Err(MixError::InvalidSpec("no sources".into()));
        }
        for s in &self.sources {
            match (&s.path, s.parts.is_empty()) {
                (Some(_), false) => {
                    return Err(MixError::InvalidSpec(format!("source {} has both path and parts", s.name)))
                }
                (None, true) => return Err(MixError::InvalidSpec(format!("source {} has no path or parts", s.name))),
                _ => {}
            }
            if !s.parts.is_empty() {
                check_proportions(&s.name, s.parts.iter().map(|p| p.proportion))?;
            }
        }
        let counted = self.sources.iter().all(|s| s.count.is_some() && s.proportion.is_none());
        let proportional = self.sources.iter().all(|s| s.proportion.is_some() && s.count.is_none());
        if counted {
            let counts: Vec<usize> = self.sources.iter().map(|s| s.count.unwrap()).collect();
            let sum: usize = counts.iter().sum();
            if let Some(total) = self.total {
                if total != sum {
                    return Err(MixError::InvalidSpec(format!("source counts sum to {sum}, total is {total}")));
                }
            }
            Ok(counts)
        } else if proportional {
            let total = self
                .total
                .ok_or_else(|| MixError::InvalidSpec("proportional sources need a total".into()))?;
            check_proportions("mix", self.sources.iter().map(|s| s.proportion.unwrap()))?;
            let weights: Vec<f64> = self.sources.iter().map(|s| s.proportion.unwrap()).collect();
            Ok(apportion(total, &weights))
        } else {
            Err(MixError::InvalidSpec("give every source either a count or a proportion".into()))
        }
    }
}

fn check_proportions(name: &str, props: impl Iterator<Item = f64>) -> Result<(), MixError> {
    let mut sum = 0.0;
    for p in props {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(MixError::InvalidSpec(format!("{name}: proportion {p} is not a non-negative number")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
        return Err(MixError::InvalidSpec(format!("{name}: proportions sum to {sum}")));
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, MixError> {
    let text = fs::read_to_string(path).map_err(|source| MixError::Io { path: path.to_path_buf(), source })?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn draw(
    name: &str,
    path: &Path,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<String>, MixError> {
    let mut lines = read_lines(path)?;
    if count > lines.len() {
        return Err(MixError::SourceTooSmall { name: name.to_string(), available: lines.len(), requested: count });
    }
    let mut picked = index::sample(rng, lines.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| std::mem::take(&mut lines[i])).collect())
}

/// Samples each source without replacement and shuffles the union. Relative
/// paths resolve against `base_dir`.
pub fn mix_datasets(spec: &MixSpec, base_dir: &Path, rng: &mut impl Rng) -> Result<MixOutput, MixError> {
    let counts = spec.source_counts()?;
    let mut lines = Vec::with_capacity(counts.iter().sum());
    let mut drawn = BTreeMap::new();
    for (source, &count) in spec.sources.iter().zip(&counts) {
        if let Some(path) = &source.path {
            for line in draw(&source.name, &base_dir.join(path), count, rng)? {
                lines.push(MixedLine { source: source.name.clone(), part: None, line });
            }
            drawn.insert(source.name.clone(), count);
            continue;
        }
        let weights: Vec<f64> = source.parts.iter().map(|p| p.proportion).collect();
        for (part, n) in source.parts.iter().zip(apportion(count, &weights)) {
            let key = format!("{}/{}", source.name, part.name);
            for line in draw(&key, &base_dir.join(&part.path), n, rng)? {
                lines.push(MixedLine { source: source.name.clone(), part: Some(part.name.clone()), line });
            }
            drawn.insert(key, n);
        }
    }
    lines.shuffle(rng);
    Ok(MixOutput { lines, counts: drawn })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn write_source(dir: &Path, name: &str, n: usize) -> PathBuf {
        let path = dir.join(format!("{name}.jsonl"));
        let body: String = (0..n).map(|i| format!("{{\"src\":\"{name}\",\"i\":{i}}}\n")).collect();
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn apportion_luth_table() {
        let w = [0.3, 0.3, 0.1, 0.1, 0.1, 0.1];
        assert_eq!(apportion(10_000, &w), vec![3000, 3000, 1000, 1000, 1000, 1000]);
        assert_eq!(apportion(7, &w).iter().sum::<usize>(), 7);
    }

    #[test]
    fn apportion_smoltalk_table() {
        let w = [18.0, 18.0, 18.0, 18.0, 9.0, 3.6, 3.6, 3.6, 3.6, 1.8, 1.8, 0.9];
        // These proportions sum to 99.9%, so quotas are renormalized.
        let c = apportion(10_000, &w);
        assert_eq!(c.iter().sum::<usize>(), 10_000);
        let sum: f64 = w.iter().sum();
        for (ci, wi) in c.iter().zip(w) {
            assert!((*ci as f64 - 10_000.0 * wi / sum).abs() < 1.0);
        }
    }

    proptest! {
        #[test]
        fn apportion_quota_property(total in 0usize..50_000, w in prop::collection::vec(0.01f64..10.0, 1..12)) {
            let c = apportion(total, &w);
            let sum: f64 = w.iter().sum();
            prop_assert_eq!(c.iter().sum::<usize>(), total);
            for (ci, wi) in c.iter().zip(&w) {
                let quota = total as f64 * wi / sum;
                prop_assert!((*ci as f64 - quota).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn counted_mix_draws_exact_counts_without_replacement() {
        let dir = tempfile::tempdir().unwrap();
        write_source(dir.path(), "a", 100);
        write_source(dir.path(), "b", 40);
        let spec = MixSpec::from_toml_str(
            r#"
seed = 3
[[source]]
name = "a"
path = "a.jsonl"
count = 60
[[source]]
name = "b"
path = "b.jsonl"
count = 40
"#,
        )
        .unwrap();
        let out = mix_datasets(&spec, dir.path(), &mut seeded(spec.seed)).unwrap();
        assert_eq!(out.lines.len(), 100);
        assert_eq!(out.counts["a"], 60);
        assert_eq!(out.counts["b"], 40);
        let mut uniq: Vec<&str> = out.lines.iter().map(|l| l.line.as_str()).collect();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 100);
        // shuffled: sources are interleaved
        assert!(out.lines[..60].iter().any(|l| l.source == "b"));
        let again = mix_datasets(&spec, dir.path(), &mut seeded(spec.seed)).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn multi_part_source_follows_table() {
        let dir = tempfile::tempdir().unwrap();
        for p in ["scholar", "smol", "aya", "math", "instruct", "hermes"] {
            write_source(dir.path(), p, 3_500);
        }
        let spec = MixSpec::from_toml_str(
            r#"
seed = 9
[[source]]
name = "luth"
count = 10000
[[source.part]]
name = "scholar"
path = "scholar.jsonl"
proportion = 0.3
[[source.part]]
name = "smol"
path = "smol.jsonl"
proportion = 0.3
[[source.part]]
name = "aya"
path = "aya.jsonl"
proportion = 0.1
[[source.part]]
name = "math"
path = "math.jsonl"
proportion = 0.1
[[source.part]]
name = "instruct"
path = "instruct.jsonl"
proportion = 0.1
[[source.part]]
name = "hermes"
path = "hermes.jsonl"
proportion = 0.1
"#,
        )
        .unwrap();
        let out = mix_datasets(&spec, dir.path(), &mut seeded(9)).unwrap();
        assert_eq!(out.lines.len(), 10_000);
        let mut by_part: BTreeMap<String, usize> = BTreeMap::new();
        for l in &out.lines {
            let v: serde_json::Value = serde_json::from_str(&l.line).unwrap();
            *by_part.entry(v["src"].as_str().unwrap().to_string()).or_default() += 1;
        }
        for (part, want) in [("scholar", 3000), ("smol", 3000), ("aya", 1000), ("math", 1000), ("instruct", 1000), ("hermes", 1000)] {
            assert!((by_part[part] as i64 - want).abs() <= 1, "{part}: {}", by_part[part]);
        }
    }

    #[test]
    fn single_source_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        write_source(dir.path(), "only", 20);
        let spec = MixSpec {
            seed: 1,
            total: Some(20),
            sources: vec![MixSource {
                name: "only".into(),
                path: Some("only.jsonl".into()),
                parts: vec![],
                count: None,
                proportion: Some(1.0),
            }],
        };
        let out = mix_datasets(&spec, dir.path(), &mut seeded(1)).unwrap();
        let mut got: Vec<String> = out.lines.into_iter().map(|l| l.line).collect();
        let mut want = read_lines(&dir.path().join("only.jsonl")).unwrap();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn too_small_source() {
        let dir = tempfile::tempdir().unwrap();
        write_source(dir.path(), "a", 5);
        let spec = MixSpec::from_toml_str("[[source]]\nname = \"a\"\npath = \"a.jsonl\"\ncount = 6\n").unwrap();
        match mix_datasets(&spec, dir.path(), &mut seeded(0)) {
            Err(MixError::SourceTooSmall { available: 5, requested: 6, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_proportions() {
        let spec = MixSpec::from_toml_str(
            "total = 10\n[[source]]\nname = \"a\"\npath = \"a\"\nproportion = 0.6\n[[source]]\nname = \"b\"\npath = \"b\"\nproportion = 0.3\n",
        )
        .unwrap();
        assert!(matches!(spec.source_counts(), Err(MixError::InvalidSpec(_))));
    }
}
