//! Stage checkpoints: a JSON header line (format, version, stage, body
//! checksum) followed by the JSON body.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::toy::ToyModel;
use super::ModelError;

pub const CHECKPOINT_FORMAT: &str = "affect-tune-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    completed_stage: u8,
    checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub completed_stage: u8,
    pub model: ToyModel,
    /// Records drawn by every completed stage; later stages exclude them.
    pub consumed_record_ids: Vec<String>,
}

fn digest(body: &str) -> String {
    super::hex(&Sha256::digest(body.as_bytes()))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let body = serde_json::to_string(ckpt).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        completed_stage: ckpt.completed_stage,
        checksum: digest(&body),
    };
    let header =
        serde_json::to_string(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, format!("{header}\n{body}\n")).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| ModelError::Checkpoint("missing header line".into()))?;
    let body = body.trim_end_matches('\n');
    let header: Header = serde_json::from_str(header)
        .map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Checkpoint(format!(
            "unknown format `{}`",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "version {} is not supported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    if digest(body) != header.checksum {
        return Err(ModelError::Checkpoint(
            "checksum mismatch; file is corrupt".into(),
        ));
    }
    let ckpt: Checkpoint =
        serde_json::from_str(body).map_err(|e| ModelError::Checkpoint(format!("bad body: {e}")))?;
    if ckpt.completed_stage != header.completed_stage {
        return Err(ModelError::Checkpoint(
            "header and body disagree on the completed stage".into(),
        ));
    }
    Ok(ckpt)
}
