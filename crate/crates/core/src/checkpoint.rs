//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MGEC"                      4 bytes magic
//! version                     u32
//! config length, config       u32, UTF-8 JSON (CheckpointMeta)
//! tensor count                u32
//! per tensor:
//!   name length, name         u32, UTF-8
//!   rank                      u32
//!   dims                      rank × u64
//!   data                      product(dims) × f32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{ClipModel, ModelConfig};
use crate::numerics::Tensor;
use crate::synthdata::{ClassInfo, Vocabulary};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MGEC";
pub const FORMAT_VERSION: u32 = 1;

/// Everything besides the weights needed to use a model on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Vocabulary words in id order, starting at id 3.
    pub vocab: Vec<String>,
    pub classes: Vec<ClassPrompt>,
    /// Split used for training, so evaluation can rebuild the same partition.
    #[serde(default)]
    pub split: Option<SplitInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitInfo {
    pub seed: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPrompt {
    pub name: String,
    pub prompt: String,
}

impl CheckpointMeta {
    pub fn new(model: &ModelConfig, vocab: &Vocabulary, classes: &[ClassInfo]) -> Self {
        Self {
            model: model.clone(),
            vocab: vocab.words().to_vec(),
            classes: classes
                .iter()
                .map(|c| ClassPrompt {
                    name: c.name.clone(),
                    prompt: c.prompt.clone(),
                })
                .collect(),
            split: None,
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_file_string(&self.vocab.join("\n"))
    }
}

pub fn encode(model: &ClipModel<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta)?;
    put_len(&mut out, json.len())?;
    out.extend_from_slice(&json);
    let params = model.params();
    put_len(&mut out, params.len())?;
    for (name, t) in params.iter() {
        put_len(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_len(&mut out, t.rank())?;
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated reading {field} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

/// Parses checkpoint bytes into metadata and named tensors in file order.
pub fn decode(bytes: &[u8]) -> Result<(CheckpointMeta, NamedTensors)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"MGEC\"")));
    }
    let version = r.u32("format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = r.u32("config length")? as usize;
    let json = r.take(len, "config")?;
    let meta: CheckpointMeta =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("invalid config JSON: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let field = |what: &str| format!("tensor[{i}].{what}");
        let name_len = r.u32(&field("name length"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &field("name"))?)
            .map_err(|_| Error::Format(format!("{} is not UTF-8", field("name"))))?
            .to_string();
        let rank = r.u32(&field("rank"))? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            let d = r.u64(&field("dims"))?;
            shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("{} too large", field("dims"))))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{} overflow", field("dims"))))?;
        let raw = r.take(numel.saturating_mul(4), &field("data"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{}: {e}", field("dims"))))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor table",
            bytes.len() - r.pos
        )));
    }
    Ok((meta, tensors))
}

/// Rebuilds a model from checkpoint bytes.
pub fn model_from_bytes(bytes: &[u8]) -> Result<(ClipModel<f32>, CheckpointMeta)> {
    let (meta, tensors) = decode(bytes)?;
    let mut model = ClipModel::new(meta.model.clone(), 0)?;
    model.load_tensors(tensors)?;
    Ok((model, meta))
}

/// Writes to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Contract(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn save(path: &Path, model: &ClipModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(model, meta)?)
}

pub fn load(path: &Path) -> Result<(ClipModel<f32>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// SHA-256 of the encoded checkpoint, hex.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
