//! Safetensors checkpoints read as manifests; tensor bytes are only touched
//! through ranged reads.
//!
//! A shard file is an 8-byte little-endian header length, a JSON header
//! mapping tensor names to `{dtype, shape, data_offsets}`, then the data
//! region. Multi-shard checkpoints carry `model.safetensors.index.json` with a
//! `weight_map` from tensor name to shard file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::dtype::Dtype;

pub const INDEX_FILE: &str = "model.safetensors.index.json";
const SHARD_EXT: &str = "safetensors";
const MAX_HEADER: u64 = 100 << 20;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> StoreError {
    StoreError::Format { path: path.to_path_buf(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Shard file name, relative to the store root.
    pub shard: String,
    /// Absolute byte offset of the tensor data in the shard file.
    pub offset: u64,
    pub len: u64,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct Shard {
    pub file: String,
    /// Header length prefix plus header bytes.
    pub data_start: u64,
    pub file_len: u64,
}

/// Manifest of a checkpoint directory.
#[derive(Debug, Clone)]
pub struct TensorStore {
    root: PathBuf,
    tensors: BTreeMap<String, TensorInfo>,
    shards: Vec<Shard>,
    indexed: bool,
}

impl TensorStore {
    /// Opens a directory with an index manifest, or one or more shard files
    /// without one.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        if !root.is_dir() {
            return Err(format_err(root, "not a checkpoint directory"));
        }
        let index_path = root.join(INDEX_FILE);
        let (files, weight_map) = if index_path.is_file() {
            let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| format_err(&index_path, e.to_string()))?;
            let map = value
                .get("weight_map")
                .and_then(Value::as_object)
                .ok_or_else(|| format_err(&index_path, "missing weight_map"))?;
            let mut weight_map = BTreeMap::new();
            for (name, file) in map {
                let file = file.as_str().ok_or_else(|| format_err(&index_path, format!("{name}: shard is not a string")))?;
                weight_map.insert(name.clone(), file.to_string());
            }
            let mut files: Vec<String> = weight_map.values().cloned().collect();
            files.sort();
            files.dedup();
            (files, Some(weight_map))
        } else {
            let mut files = Vec::new();
            for entry in fs::read_dir(root).map_err(io_err(root))? {
                let path = entry.map_err(io_err(root))?.path();
                if path.is_file() && path.extension().is_some_and(|e| e == SHARD_EXT) {
                    files.push(path.file_name().unwrap().to_string_lossy().into_owned());
                }
            }
            files.sort();
            (files, None)
        };
        if files.is_empty() {
            return Err(format_err(root, "no safetensors shards"));
        }

        let mut tensors = BTreeMap::new();
        let mut shards = Vec::with_capacity(files.len());
        for file in files {
            let path = root.join(&file);
            let (shard, infos) = read_header(&path, &file)?;
            for info in infos {
                if let Some(prev) = tensors.insert(info.name.clone(), info) {
                    return Err(format_err(&path, format!("tensor {} also in {}", prev.name, prev.shard)));
                }
            }
            shards.push(shard);
        }
        if let Some(weight_map) = &weight_map {
            for (name, file) in weight_map {
                match tensors.get(name) {
                    Some(info) if &info.shard == file => {}
                    _ => return Err(format_err(&index_path, format!("{name} is not in shard {file}"))),
                }
            }
            if let Some(name) = tensors.keys().find(|n| !weight_map.contains_key(*n)) {
                return Err(format_err(&index_path, format!("{name} missing from weight_map")));
            }
        }
        Ok(Self { root: root.to_path_buf(), tensors, shards, indexed: weight_map.is_some() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn tensors(&self) -> &BTreeMap<String, TensorInfo> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.get(name)
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn is_indexed(&self) -> bool {
        self.indexed
    }

    pub fn total_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn shard_path(&self, shard: &str) -> PathBuf {
        self.root.join(shard)
    }

    /// Tensors of one shard in data order.
    pub fn shard_tensors(&self, shard: &str) -> Vec<&TensorInfo> {
        let mut v: Vec<&TensorInfo> = self.tensors.values().filter(|t| t.shard == shard).collect();
        v.sort_by_key(|t| t.offset);
        v
    }

    pub fn largest_tensor_bytes(&self) -> u64 {
        self.tensors.values().map(|t| t.len).max().unwrap_or(0)
    }

    /// Reads a whole tensor. Meant for small tensors and tests.
    pub fn read_tensor(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let info = self.get(name).ok_or_else(|| format_err(&self.root, format!("no tensor {name}")))?;
        let mut reader = TensorReader::open(self, info)?;
        let mut buf = vec![0u8; info.len as usize];
        reader.read_exact(&mut buf)?;
        Ok(buf)
    }
}

fn read_header(path: &Path, file: &str) -> Result<(Shard, Vec<TensorInfo>), StoreError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let file_len = f.metadata().map_err(io_err(path))?.len();
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(io_err(path))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > MAX_HEADER || 8 + header_len > file_len {
        return Err(format_err(path, format!("header length {header_len} out of range")));
    }
    let mut header = vec![0u8; header_len as usize];
    f.read_exact(&mut header).map_err(io_err(path))?;
    let value: Value = serde_json::from_slice(&header).map_err(|e| format_err(path, e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| format_err(path, "header is not an object"))?;
    let data_start = 8 + header_len;
    let data_len = file_len - data_start;

    let mut infos = Vec::new();
    for (name, entry) in obj {
        if name == "__metadata__" {
            continue;
        }
        let bad = |m: &str| format_err(path, format!("{name}: {m}"));
        let dtype: Dtype = entry
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing dtype"))?
            .parse()
            .map_err(|e: String| bad(&e))?;
        let shape: Vec<usize> = entry
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing shape"))?
            .iter()
            .map(|d| d.as_u64().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("bad shape"))?;
        let offsets = entry
            .get("data_offsets")
            .and_then(Value::as_array)
            .filter(|a| a.len() == 2)
            .and_then(|a| Some((a[0].as_u64()?, a[1].as_u64()?)))
            .ok_or_else(|| bad("bad data_offsets"))?;
        let (begin, end) = offsets;
        let numel: usize = shape.iter().product();
        if end < begin || end > data_len {
            return Err(bad("data_offsets outside the data region"));
        }
        if (end - begin) as usize != numel * dtype.size() {
            return Err(bad(&format!("{} bytes for {numel} x {dtype}", end - begin)));
        }
        infos.push(TensorInfo {
            name: name.clone(),
            dtype,
            shape,
            shard: file.to_string(),
            offset: data_start + begin,
            len: end - begin,
        });
    }
    Ok((Shard { file: file.to_string(), data_start, file_len }, infos))
}

/// Sequential reader over one tensor's bytes.
pub struct TensorReader {
    file: File,
    path: PathBuf,
    remaining: u64,
}

impl TensorReader {
    pub fn open(store: &TensorStore, info: &TensorInfo) -> Result<Self, StoreError> {
        let path = store.shard_path(&info.shard);
        let mut file = File::open(&path).map_err(io_err(&path))?;
        file.seek(SeekFrom::Start(info.offset)).map_err(io_err(&path))?;
        Ok(Self { file, path, remaining: info.len })
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), StoreError> {
        if buf.len() as u64 > self.remaining {
            return Err(format_err(&self.path, "read past the end of a tensor"));
        }
        self.file.read_exact(buf).map_err(io_err(&self.path))?;
        self.remaining -= buf.len() as u64;
        Ok(())
    }
}

/// Layout entry for [`SafetensorsWriter`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, dtype: Dtype, shape: &[usize]) -> Self {
        Self { name: name.into(), dtype, shape: shape.to_vec() }
    }

    pub fn byte_len(&self) -> u64 {
        (self.shape.iter().product::<usize>() * self.dtype.size()) as u64
    }
}

/// Writes one shard: the header up front, then tensor data streamed in
/// layout order.
pub struct SafetensorsWriter {
    out: BufWriter<File>,
    path: PathBuf,
    expected: u64,
    written: u64,
}

impl SafetensorsWriter {
    pub fn create(path: &Path, layout: &[TensorSpec], metadata: Option<&BTreeMap<String, String>>) -> Result<Self, StoreError> {
        let mut header = Map::new();
        if let Some(meta) = metadata {
            let m: Map<String, Value> = meta.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
            header.insert("__metadata__".into(), Value::Object(m));
        }
        let mut offset = 0u64;
        for spec in layout {
            let end = offset + spec.byte_len();
            header.insert(
                spec.name.clone(),
                serde_json::json!({ "dtype": spec.dtype.as_str(), "shape": spec.shape, "data_offsets": [offset, end] }),
            );
            offset = end;
        }
        let mut bytes = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        while bytes.len() % 8 != 0 {
            bytes.push(b' ');
        }
        let mut out = BufWriter::with_capacity(1 << 20, File::create(path).map_err(io_err(path))?);
        out.write_all(&(bytes.len() as u64).to_le_bytes()).map_err(io_err(path))?;
        out.write_all(&bytes).map_err(io_err(path))?;
        Ok(Self { out, path: path.to_path_buf(), expected: offset, written: 0 })
    }

    pub fn write(&mut self, data: &[u8]) -> Result<(), StoreError> {
        if self.written + data.len() as u64 > self.expected {
            return Err(format_err(&self.path, "more data than the layout declares"));
        }
        self.out.write_all(data).map_err(io_err(&self.path))?;
        self.written += data.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), StoreError> {
        if self.written != self.expected {
            return Err(format_err(&self.path, format!("wrote {} of {} data bytes", self.written, self.expected)));
        }
        self.out.flush().map_err(io_err(&self.path))
    }
}

/// Writes a single-shard file from in-memory tensors.
pub fn write_safetensors(path: &Path, tensors: &[(TensorSpec, Vec<u8>)]) -> Result<(), StoreError> {
    let layout: Vec<TensorSpec> = tensors.iter().map(|(s, _)| s.clone()).collect();
    let mut w = SafetensorsWriter::create(path, &layout, None)?;
    for (spec, data) in tensors {
        if data.len() as u64 != spec.byte_len() {
            return Err(format_err(path, format!("{}: {} bytes, expected {}", spec.name, data.len(), spec.byte_len())));
        }
        w.write(data)?;
    }
    w.finish()
}

/// Writes `model.safetensors.index.json` for a sharded checkpoint.
pub fn write_index(root: &Path, weight_map: &BTreeMap<String, String>, total_size: u64) -> Result<(), StoreError> {
    let path = root.join(INDEX_FILE);
    let value = serde_json::json!({ "metadata": { "total_size": total_size }, "weight_map": weight_map });
    fs::write(&path, serde_json::to_vec_pretty(&value).expect("index serializes")).map_err(io_err(&path))
}
