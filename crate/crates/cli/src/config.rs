//! Structured run configuration: a TOML file mirroring the encoder, adapter,
//! training, loss, projection and inference settings, with command-line
//! flags taking precedence over file values.

use std::path::Path;

use pointground_core::encoders::{Backend, EncoderConfig, PointBackbone, SaLevel};
use pointground_core::evaluation::MetricParams;
use pointground_core::losses::LossWeights;
use pointground_core::model::ModelConfig;
use pointground_core::projection::ExtensionMode;
use pointground_core::training::TrainConfig;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    encoder: Option<EncoderSection>,
    adapters: Option<AdapterSection>,
    train: Option<TrainSection>,
    loss: Option<LossSection>,
    projection: Option<ProjectionSection>,
    inference: Option<InferenceSection>,
    metrics: Option<MetricsSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSection {
    backend: Option<String>,
    d: Option<usize>,
    point_sample_count: Option<usize>,
    transformer_layers: Option<usize>,
    transformer_heads: Option<usize>,
    backbone: Option<BackboneSection>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum BackboneSection {
    SharedMlp { hidden: usize },
    SetAbstraction { level1: SaLevelSection, level2: SaLevelSection },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaLevelSection {
    centroids: usize,
    neighbors: usize,
    hidden: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterSection {
    alpha: Option<f64>,
    alpha_text: Option<f64>,
    alpha_2d: Option<f64>,
    alpha_3d: Option<f64>,
    hidden: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    batch_size_scenes: Option<usize>,
    base_lr: Option<f64>,
    transformer_lr_multiplier: Option<f64>,
    decay_factor: Option<f64>,
    decay_epochs: Option<Vec<usize>>,
    max_epochs: Option<usize>,
    grad_clip: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    lambda3: Option<f64>,
    lambda4: Option<f64>,
    tau: Option<f64>,
    normalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionSection {
    extension_mode: Option<String>,
    use_depth_visibility: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferenceSection {
    topk: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsSection {
    iou_thresholds: Option<Vec<f64>>,
    recall_n: Option<usize>,
}

/// Fully resolved run configuration (file values with defaults applied;
/// flag overrides are applied by the command layer).
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub alpha_text: f64,
    pub alpha_2d: f64,
    pub alpha_3d: f64,
    pub adapter_hidden: usize,
    pub train: TrainConfig,
    pub normalize: bool,
    pub extension_mode: ExtensionMode,
    pub use_depth_visibility: bool,
    pub topk: usize,
    pub metrics: MetricParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder: EncoderConfig::default(),
            alpha_text: 0.5,
            alpha_2d: 0.5,
            alpha_3d: 0.5,
            adapter_hidden: 512,
            train: TrainConfig::default(),
            normalize: true,
            extension_mode: ExtensionMode::BoundaryExtended,
            use_depth_visibility: false,
            topk: 3,
            metrics: MetricParams::default(),
        }
    }
}

impl RunConfig {
    /// Load from a TOML file; missing sections fall back to defaults.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_file(file)
    }

    fn from_file(file: FileConfig) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        if let Some(seed) = file.seed {
            config.seed = seed;
        }
        if let Some(e) = file.encoder {
            if let Some(backend) = e.backend {
                config.encoder.backend = match backend.as_str() {
                    "toy" => Backend::Toy,
                    "vlm" => Backend::Vlm,
                    other => {
                        return Err(ConfigError::Invalid {
                            field: "encoder.backend".into(),
                            message: format!("unknown backend {other:?} (expected toy or vlm)"),
                        })
                    }
                };
            }
            if let Some(d) = e.d {
                config.encoder.d = d;
            }
            if let Some(v) = e.point_sample_count {
                config.encoder.point_sample_count = v;
            }
            if let Some(v) = e.transformer_layers {
                config.encoder.transformer_layers = v;
            }
            if let Some(v) = e.transformer_heads {
                config.encoder.transformer_heads = v;
            }
            if let Some(b) = e.backbone {
                config.encoder.backbone = match b {
                    BackboneSection::SharedMlp { hidden } => PointBackbone::SharedMlp { hidden },
                    BackboneSection::SetAbstraction { level1, level2 } => {
                        PointBackbone::SetAbstraction {
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
                        }
                    }
                };
            }
        }
        if let Some(a) = file.adapters {
            if let Some(alpha) = a.alpha {
                config.alpha_text = alpha;
                config.alpha_2d = alpha;
                config.alpha_3d = alpha;
            }
            if let Some(v) = a.alpha_text {
                config.alpha_text = v;
            }
            if let Some(v) = a.alpha_2d {
                config.alpha_2d = v;
            }
            if let Some(v) = a.alpha_3d {
                config.alpha_3d = v;
            }
            if let Some(v) = a.hidden {
                config.adapter_hidden = v;
            }
            for (field, v) in [
                ("adapters.alpha_text", config.alpha_text),
                ("adapters.alpha_2d", config.alpha_2d),
                ("adapters.alpha_3d", config.alpha_3d),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(ConfigError::Invalid {
                        field: field.into(),
                        message: format!("residual ratio must lie in [0, 1], got {v}"),
                    });
                }
            }
        }
        if let Some(t) = file.train {
            if let Some(v) = t.batch_size_scenes {
                config.train.batch_size_scenes = v;
            }
            if let Some(v) = t.base_lr {
                config.train.base_lr = v;
            }
            if let Some(v) = t.transformer_lr_multiplier {
                config.train.transformer_lr_multiplier = v;
            }
            if let Some(v) = t.decay_factor {
                config.train.decay_factor = v;
            }
            if let Some(v) = t.decay_epochs {
                config.train.decay_epochs = v;
            }
            if let Some(v) = t.max_epochs {
                config.train.max_epochs = v;
            }
            if let Some(v) = t.grad_clip {
                config.train.grad_clip = Some(v);
            }
        }
        if let Some(l) = file.loss {
            if let Some(v) = l.normalize {
                config.normalize = v;
            }
            let w = &mut config.train.loss_weights;
            if let Some(v) = l.lambda1 {
                w.lambda1 = v;
            }
            if let Some(v) = l.lambda2 {
                w.lambda2 = v;
            }
            if let Some(v) = l.lambda3 {
                w.lambda3 = v;
            }
            if let Some(v) = l.lambda4 {
                w.lambda4 = v;
            }
            if let Some(v) = l.tau {
                w.tau = v;
            }

        }
        if let Some(p) = file.projection {
            if let Some(mode) = p.extension_mode {
                config.extension_mode = parse_extension_mode(&mode)?;
            }
            if let Some(v) = p.use_depth_visibility {
                config.use_depth_visibility = v;
            }
        }
        if let Some(i) = file.inference {
            if let Some(v) = i.topk {
                config.topk = v;
            }
        }
        if let Some(m) = file.metrics {
            if let Some(v) = m.iou_thresholds {
                config.metrics.iou_thresholds = v;
            }
            if let Some(v) = m.recall_n {
                config.metrics.recall_n = v;
            }
        }
        config.encoder.seed = config.seed;
        config.train.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.encoder.validate().map_err(|e| ConfigError::Invalid {
            field: "encoder".into(),
            message: e.to_string(),
        })?;
        self.train.validate().map_err(|e| ConfigError::Invalid {
            field: "train".into(),
            message: e.to_string(),
        })?;
        if self.topk == 0 {
            return Err(ConfigError::Invalid {
                field: "inference.topk".into(),
                message: "topk must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Model configuration for a vocabulary of `k` categories.
    pub fn model_config(&self, k: usize) -> ModelConfig {
        let mut mc = ModelConfig::new(self.encoder.clone(), k);
        mc.alpha_text = self.alpha_text;
        mc.alpha_2d = self.alpha_2d;
        mc.alpha_3d = self.alpha_3d;
        mc.adapter_hidden = self.adapter_hidden;
        mc.normalize = self.normalize;
        mc
    }

    /// Combined fingerprint of model and training configuration.
    pub fn fingerprint(&self, k: usize) -> u64 {
        self.model_config(k).fingerprint() ^ self.train.fingerprint().rotate_left(23)
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.train.loss_weights
    }
}

pub fn parse_extension_mode(s: &str) -> Result<ExtensionMode, ConfigError> {
    match s {
        "none" => Ok(ExtensionMode::None),
        "boundary_extended" | "boundary-extended" => Ok(ExtensionMode::BoundaryExtended),
        other => Err(ConfigError::Invalid {
            field: "projection.extension_mode".into(),
            message: format!("unknown mode {other:?} (expected none or boundary_extended)"),
        }),
    }
}

pub fn extension_mode_name(mode: ExtensionMode) -> &'static str {
    match mode {
        ExtensionMode::None => "none",
        ExtensionMode::BoundaryExtended => "boundary_extended",
    }
}
