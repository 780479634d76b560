//! Checkpoint archive: one file holding every named tensor, plus a JSON
//! metadata sidecar. Writing is deterministic, so save -> load -> save
//! produces byte-identical files.

use std::path::{Path, PathBuf};

use lightcl_core::arch::{build_model, Arch};
use lightcl_core::model::Model;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"LCLCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Arch,
    pub seed: u64,
    pub task_index: usize,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    input: [usize; 3],
    num_classes: usize,
    tensors: Vec<TensorDesc>,
}

#[derive(Serialize, Deserialize)]
struct TensorDesc {
    unit: String,
    role: String,
    shape: Vec<usize>,
    len: usize,
}

pub fn sidecar_path(archive: &Path) -> PathBuf {
    let stem = archive
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    archive.with_file_name(format!("{stem}.meta.json"))
}

pub fn save_checkpoint(model: &Model<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let entries = model.tensor_entries();
    let header = Header {
        arch: model.arch,
        input: [model.input_shape.0, model.input_shape.1, model.input_shape.2],
        num_classes: model.num_classes,
        tensors: entries
            .iter()
            .map(|(unit, role, shape, data)| TensorDesc {
                unit: unit.clone(),
                role: (*role).into(),
                shape: shape.clone(),
                len: data.len(),
            })
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| CliError::format(path, e.to_string()))?;
    let payload: usize = entries.iter().map(|(_, _, _, d)| d.len() * 4).sum();
    let mut bytes = Vec::with_capacity(MAGIC.len() + 4 + header_bytes.len() + payload);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for (_, _, _, data) in &entries {
        for v in *data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    let meta_path = sidecar_path(path);
    let meta_text = serde_json::to_string_pretty(meta)
        .map_err(|e| CliError::format(&meta_path, e.to_string()))?;
    std::fs::write(&meta_path, meta_text).map_err(|e| CliError::io(&meta_path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CliError::format(path, "not a checkpoint archive"));
    }
    let header_len =
        u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(CliError::format(path, "truncated checkpoint header"));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| CliError::format(path, e.to_string()))?;
    let mut model: Model<f32> = build_model(
        header.arch,
        (header.input[0], header.input[1], header.input[2]),
        header.num_classes,
        0,
    )
    .map_err(CliError::from)?;
    let mut offset = header_len;
    for desc in &header.tensors {
        let end = offset + desc.len * 4;
        if body.len() < end {
            return Err(CliError::format(
                path,
                format!("truncated tensor {}/{}", desc.unit, desc.role),
            ));
        }
        let data: Vec<f32> = body[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        model
            .load_tensor(&desc.unit, &desc.role, &data)
            .map_err(CliError::from)?;
        offset = end;
    }
    if offset != body.len() {
        return Err(CliError::format(path, "trailing bytes after last tensor"));
    }
    let meta_path = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&meta_text).map_err(|e| CliError::format(&meta_path, e.to_string()))?;
    Ok((model, meta))
}
