//! IO companion to `pointground-core`: scene-bundle file formats, offline
//! projection and embedding caches, checkpoint archives, run configuration,
//! and the pipeline commands behind the `pointground` binary.

pub mod bundle;
pub mod caches;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

/// Environment variable relocating per-scene caches out of the bundle
/// directories; the only environment knob the pipeline reads.
pub const CACHE_DIR_ENV: &str = "POINTGROUND_CACHE_DIR";

/// Directory where a scene's caches live: the bundle directory itself, or
/// `$POINTGROUND_CACHE_DIR/<scene_id>` when the variable is set.
pub fn cache_dir_for(bundle_dir: &Path, scene_id: &str) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(root) => PathBuf::from(root).join(scene_id),
        None => bundle_dir.to_path_buf(),
    }
}

/// Provenance stamp embedded in every artifact this pipeline writes.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    /// Combined model + training config fingerprint, hex-encoded.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(config_hash: u64, seed: u64) -> Self {
        Self {
            config_hash: format!("{config_hash:016x}"),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}
