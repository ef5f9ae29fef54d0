//! Binary checkpoint format.
//!
//! ```text
//! "PTRN"                     4 bytes magic
//! version                    u32 LE
//! header length              u32 LE
//! header                     JSON: config, standardizer, rider ids, epoch, dims
//! w_x | w_h | b | v | c_out  f64 LE, row-major, gate blocks i, f, g, o
//! crc32                      u32 LE over every preceding byte
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Standardizer;
use crate::lstm::LstmParams;

use super::TrainConfig;

pub const MAGIC: &[u8; 4] = b"PTRN";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 12;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint: {found} bytes, expected {expected}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: LstmParams<f64>,
    pub standardizer: Standardizer<f64>,
    pub training_rider_ids: Vec<String>,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    standardizer: Standardizer<f64>,
    training_rider_ids: Vec<String>,
    epoch: usize,
    input_dim: usize,
    hidden_dim: usize,
}

fn tensor_len(input_dim: usize, hidden_dim: usize) -> usize {
    LstmParams::<f64>::zeros(input_dim, hidden_dim).num_params()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            standardizer: self.standardizer.clone(),
            training_rider_ids: self.training_rider_ids.clone(),
            epoch: self.epoch,
            input_dim: self.params.input_dim,
            hidden_dim: self.params.hidden_dim,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 8 * self.params.num_params() + CRC_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for w in self.params.iter() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < PREFIX_LEN + CRC_LEN {
            return Err(CheckpointError::Truncated { expected: PREFIX_LEN + CRC_LEN, found: bytes.len() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version });
        }
        let checksum = || {
            let body = &bytes[..bytes.len() - CRC_LEN];
            let stored = u32::from_le_bytes(bytes[bytes.len() - CRC_LEN..].try_into().unwrap());
            let computed = crc32fast::hash(body);
            if stored == computed {
                Ok(())
            } else {
                Err(CheckpointError::Checksum { stored, computed })
            }
        };

        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json_end = PREFIX_LEN + json_len;
        if json_end + CRC_LEN > bytes.len() {
            return Err(CheckpointError::Truncated { expected: json_end + CRC_LEN, found: bytes.len() });
        }
        let header: Header = match serde_json::from_slice(&bytes[PREFIX_LEN..json_end]) {
            Ok(h) => h,
            Err(e) => {
                checksum()?;
                return Err(CheckpointError::Header(e.to_string()));
            }
        };
        let n = tensor_len(header.input_dim, header.hidden_dim);
        let expected = json_end + 8 * n + CRC_LEN;
        if bytes.len() < expected {
            return Err(CheckpointError::Truncated { expected, found: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(CheckpointError::TrailingBytes { extra: bytes.len() - expected });
        }
        checksum()?;

        let mut params = LstmParams::zeros(header.input_dim, header.hidden_dim);
        let raw = &bytes[json_end..json_end + 8 * n];
        for (w, chunk) in params.iter_mut().zip(raw.chunks_exact(8)) {
            *w = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(Checkpoint {
            config: header.config,
            params,
            standardizer: header.standardizer,
            training_rider_ids: header.training_rider_ids,
            epoch: header.epoch,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes()).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::from_bytes(&bytes)
}
