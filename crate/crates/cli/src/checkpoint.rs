//! Checkpoint archive: a named-tensor container with a JSON header.
//!
//! Layout: magic `PGCK`, u32 version, u64 header length, JSON header
//! (model config, residual ratios, d, K, config hash, seed, epoch, tensor
//! index), then the tensors' f64-LE payloads in index order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use pointground_core::encoders::{Backend, EncoderConfig, PointBackbone, SaLevel};
use pointground_core::matrix::Matrix;
use pointground_core::model::{Checkpoint, ModelConfig};
use serde::{Deserialize, Serialize};

pub const CKPT_MAGIC: &[u8; 4] = b"PGCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl CheckpointError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.display().to_string(), message: message.into() }
    }
}

#[derive(Serialize, Deserialize)]
struct SaLevelRecord {
    centroids: usize,
    neighbors: usize,
    hidden: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum BackboneRecord {
    SharedMlp { hidden: usize },
    SetAbstraction { level1: SaLevelRecord, level2: SaLevelRecord },
}

#[derive(Serialize, Deserialize)]
struct EncoderRecord {
    backend: String,
    d: usize,
    point_sample_count: usize,
    transformer_layers: usize,
    transformer_heads: usize,
    seed: u64,
    backbone: BackboneRecord,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    config_hash: String,
    seed: u64,
    epoch: usize,
    encoder: EncoderRecord,
    alpha_text: f64,
    alpha_2d: f64,
    alpha_3d: f64,
    adapter_hidden: usize,
    k: usize,
    normalize: bool,
    tensors: Vec<TensorRecord>,
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    let config = &checkpoint.config;
    let header = Header {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: format!("{:016x}", checkpoint.config_hash),
        seed: checkpoint.seed,
        epoch: checkpoint.epoch,
        encoder: encoder_record(&config.encoder),
        alpha_text: config.alpha_text,
        alpha_2d: config.alpha_2d,
        alpha_3d: config.alpha_3d,
        adapter_hidden: config.adapter_hidden,
        k: config.k,
        normalize: config.normalize,
        tensors: checkpoint
            .tensors
            .iter()
            .map(|(name, m)| TensorRecord { name: name.clone(), rows: m.rows(), cols: m.cols() })
            .collect(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| CheckpointError::format(path, e.to_string()))?;
    let mut file = fs::File::create(path).map_err(|e| CheckpointError::io(path, e))?;
    file.write_all(CKPT_MAGIC).map_err(|e| CheckpointError::io(path, e))?;
    file.write_all(&CKPT_VERSION.to_le_bytes()).map_err(|e| CheckpointError::io(path, e))?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(|e| CheckpointError::io(path, e))?;
    file.write_all(&header_json).map_err(|e| CheckpointError::io(path, e))?;
    for (_, m) in &checkpoint.tensors {
        let mut bytes = Vec::with_capacity(m.values().len() * 8);
        for v in m.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes).map_err(|e| CheckpointError::io(path, e))?;
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut file = fs::File::open(path).map_err(|e| CheckpointError::io(path, e))?;
    let mut prefix = [0u8; 16];
    file.read_exact(&mut prefix).map_err(|e| CheckpointError::io(path, e))?;
    if &prefix[0..4] != CKPT_MAGIC {
        return Err(CheckpointError::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(CheckpointError::format(path, format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(prefix[8..16].try_into().unwrap()) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes).map_err(|e| CheckpointError::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CheckpointError::format(path, e.to_string()))?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for record in &header.tensors {
        let count = record.rows * record.cols;
        let mut bytes = vec![0u8; count * 8];
        file.read_exact(&mut bytes).map_err(|e| CheckpointError::io(path, e))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((record.name.clone(), Matrix::from_vec(record.rows, record.cols, data)));
    }

    let config_hash = u64::from_str_radix(&header.config_hash, 16)
        .map_err(|_| CheckpointError::format(path, "config_hash must be hex"))?;
    let mut config = ModelConfig::new(encoder_config(path, &header.encoder)?, header.k);
    config.alpha_text = header.alpha_text;
    config.alpha_2d = header.alpha_2d;
    config.alpha_3d = header.alpha_3d;
    config.adapter_hidden = header.adapter_hidden;
    config.normalize = header.normalize;

    Ok(Checkpoint { config, config_hash, seed: header.seed, epoch: header.epoch, tensors })
}

fn encoder_record(config: &EncoderConfig) -> EncoderRecord {
    EncoderRecord {
        backend: match config.backend {
            Backend::Vlm => "vlm".to_string(),
            Backend::Toy => "toy".to_string(),
        },
        d: config.d,
        point_sample_count: config.point_sample_count,
        transformer_layers: config.transformer_layers,
        transformer_heads: config.transformer_heads,
        seed: config.seed,
        backbone: match &config.backbone {
            PointBackbone::SharedMlp { hidden } => BackboneRecord::SharedMlp { hidden: *hidden },
            PointBackbone::SetAbstraction { level1, level2 } => BackboneRecord::SetAbstraction {
                level1: SaLevelRecord {
                    centroids: level1.centroids,
                    neighbors: level1.neighbors,
                    hidden: level1.hidden,
                },
                level2: SaLevelRecord {
                    centroids: level2.centroids,
                    neighbors: level2.neighbors,
                    hidden: level2.hidden,
                },
            },
        },
    }
}

fn encoder_config(path: &Path, record: &EncoderRecord) -> Result<EncoderConfig, CheckpointError> {
    let backend = match record.backend.as_str() {
        "vlm" => Backend::Vlm,
        "toy" => Backend::Toy,
        other => return Err(CheckpointError::format(path, format!("unknown backend {other}"))),
    };
    Ok(EncoderConfig {
        backend,
        d: record.d,
        point_sample_count: record.point_sample_count,
        transformer_layers: record.transformer_layers,
        transformer_heads: record.transformer_heads,
        seed: record.seed,
        backbone: match &record.backbone {
            BackboneRecord::SharedMlp { hidden } => PointBackbone::SharedMlp { hidden: *hidden },
            BackboneRecord::SetAbstraction { level1, level2 } => PointBackbone::SetAbstraction {
                level1: SaLevel {
                    centroids: level1.centroids,
                    neighbors: level1.neighbors,
                    hidden: level1.hidden,
                },
                level2: SaLevel {
                    centroids: level2.centroids,
                    neighbors: level2.neighbors,
                    hidden: level2.hidden,
                },
            },
        },
    })
}
