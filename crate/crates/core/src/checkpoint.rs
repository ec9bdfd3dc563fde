//! Binary checkpoint format.
//!
//! ```text
//! "MTL1"            4 bytes magic
//! version           u32 little-endian
//! manifest_len      u64 little-endian
//! manifest          UTF-8 JSON: encoder config, task specs, vocabulary,
//!                   array index (name, shape, offset), data length, data sha256
//! data              concatenated little-endian f32 arrays
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{param_shapes, EncoderConfig, Param};
use crate::error::{Error, Result};
use crate::model::{MtlModel, Task, TaskHead, TaskSpec};
use crate::tokenizer::Vocab;

pub const MAGIC: &[u8; 4] = b"MTL1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    encoder: EncoderConfig,
    tasks: Vec<TaskSpec>,
    vocab: Vec<String>,
    arrays: Vec<ArrayEntry>,
    data_len: u64,
    data_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in f32 elements.
    offset: usize,
}

fn head_names(task: &str) -> (String, String) {
    (format!("head.{task}.weight"), format!("head.{task}.bias"))
}

fn named_arrays(model: &MtlModel) -> Vec<(String, &Param)> {
    let mut out = model.encoder.named();
    for t in &model.tasks {
        let (w, b) = head_names(&t.spec.name);
        out.push((w, &t.head.weight));
        out.push((b, &t.head.bias));
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_bytes(model: &MtlModel) -> Result<Vec<u8>> {
    let mut data = Vec::new();
    let mut arrays = Vec::new();
    let mut offset = 0;
    for (name, p) in named_arrays(model) {
        arrays.push(ArrayEntry {
            name,
            shape: p.shape.clone(),
            offset,
        });
        offset += p.numel();
        for v in &p.data {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        encoder: model.config.clone(),
        tasks: model.tasks.iter().map(|t| t.spec.clone()).collect(),
        vocab: model.vocab.tokens().to_vec(),
        arrays,
        data_len: data.len() as u64,
        data_sha256: sha256_hex(&data),
    };
    let manifest = serde_json::to_vec_pretty(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<MtlModel> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::CheckpointFormat("bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Integrity("file ends inside the header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let manifest_end = HEADER_LEN
        .checked_add(manifest_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Integrity("file ends inside the manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| Error::CheckpointFormat(format!("manifest: {e}")))?;
    let data = &bytes[manifest_end..];
    if data.len() as u64 != manifest.data_len {
        return Err(Error::Integrity(format!(
            "data section has {} bytes, manifest declares {}",
            data.len(),
            manifest.data_len
        )));
    }
    if sha256_hex(data) != manifest.data_sha256 {
        return Err(Error::Integrity("data checksum mismatch".into()));
    }

    let floats: Vec<f32> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mut entries = manifest.arrays.iter();
    let mut take = |name: &str, shape: &[usize]| -> Result<Param> {
        let e = entries
            .next()
            .ok_or_else(|| Error::CheckpointFormat(format!("missing array {name}")))?;
        if e.name != name || e.shape != shape {
            return Err(Error::CheckpointFormat(format!(
                "expected array {name} {shape:?}, found {} {:?}",
                e.name, e.shape
            )));
        }
        let n: usize = shape.iter().product();
        let slice = floats
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Integrity(format!("array {name} runs past the data section")))?;
        Ok(Param {
            shape: shape.to_vec(),
            data: slice.to_vec(),
        })
    };

    manifest.encoder.validate()?;
    let shapes = param_shapes(&manifest.encoder);
    let mut encoder_err = None;
    let encoder = shapes.map(|name, shape| match take(name, shape) {
        Ok(p) => p,
        Err(e) => {
            encoder_err.get_or_insert(e);
            Param::zeros(&[1])
        }
    });
    if let Some(e) = encoder_err {
        return Err(e);
    }
    let h = manifest.encoder.hidden_dim;
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for spec in manifest.tasks {
        spec.validate()?;
        let (wn, bn) = head_names(&spec.name);
        let k = spec.num_labels();
        let head = TaskHead {
            weight: take(&wn, &[h, k])?,
            bias: take(&bn, &[k])?,
        };
        tasks.push(Task { spec, head });
    }
    if entries.next().is_some() {
        return Err(Error::CheckpointFormat("unexpected trailing arrays".into()));
    }
    let vocab = Vocab::from_tokens(manifest.vocab)?;
    if vocab.len() != manifest.encoder.vocab_size {
        return Err(Error::CheckpointFormat(
            "vocabulary size disagrees with encoder config".into(),
        ));
    }
    Ok(MtlModel {
        config: manifest.encoder,
        encoder,
        tasks,
        vocab,
    })
}

pub fn save_checkpoint(model: &MtlModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MtlModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// sha256 of the serialized checkpoint.
pub fn digest(model: &MtlModel) -> Result<String> {
    Ok(sha256_hex(&to_bytes(model)?))
}
