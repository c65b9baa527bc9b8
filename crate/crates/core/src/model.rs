//! Composition of the trainable pieces — 3D encoder, the three adapters, and
//! the query classifier — over one parameter store, plus checkpoint
//! snapshots.

use alloc::string::String;
use alloc::vec::Vec;

use crate::adaptation::{Adapter, QueryClassifier, DEFAULT_ALPHA};
use crate::autodiff::{Graph, NodeId};
use crate::encoders::{EncoderConfig, EncoderError, PointBackbone, ProposalEncoder};
use crate::matrix::Matrix;
use crate::params::{fnv_bytes, fnv_init, GraphBinder, ParamStore};
use crate::scene::{Proposal, Scene};

/// Everything needed to rebuild the trainable model deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Residual ratios for the text / 2D / 3D adapters.
    pub alpha_text: f64,
    pub alpha_2d: f64,
    pub alpha_3d: f64,
    /// Adapter hidden width (512 in the reference configuration).
    pub adapter_hidden: usize,
    /// Category vocabulary size K.
    pub k: usize,
    /// L2-normalize embeddings before similarity dot products, both in the
    /// contrastive losses and in inference ranking.
    pub normalize: bool,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, k: usize) -> Self {
        Self {
            encoder,
            alpha_text: DEFAULT_ALPHA,
            alpha_2d: DEFAULT_ALPHA,
            alpha_3d: DEFAULT_ALPHA,
            adapter_hidden: 512,
            k,
            normalize: true,
        }
    }

    /// Deterministic digest of the model configuration; stamped into
    /// checkpoints and downstream artifacts.
    pub fn fingerprint(&self) -> u64 {
        let mut h = fnv_init();
        let e = &self.encoder;
        for v in [
            e.d as u64,
            e.point_sample_count as u64,
            e.transformer_layers as u64,
            e.transformer_heads as u64,
            e.seed,
            self.adapter_hidden as u64,
            self.k as u64,
            self.normalize as u64,
        ] {
            h = fnv_bytes(h, &v.to_le_bytes());
        }
        for v in [self.alpha_text, self.alpha_2d, self.alpha_3d] {
            h = fnv_bytes(h, &v.to_le_bytes());
        }
        match &e.backbone {
            PointBackbone::SharedMlp { hidden } => {
                h = fnv_bytes(h, b"mlp");
                h = fnv_bytes(h, &(*hidden as u64).to_le_bytes());
            }
            PointBackbone::SetAbstraction { level1, level2 } => {
                h = fnv_bytes(h, b"sa");
                for l in [level1, level2] {
                    for v in [l.centroids, l.neighbors, l.hidden] {
                        h = fnv_bytes(h, &(v as u64).to_le_bytes());
                    }
                }
            }
        }
        h
    }
}

/// Named-tensor snapshot of a trained model plus the metadata needed to
/// rebuild and verify it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub config_hash: u64,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<(String, Matrix)>,
}

/// The trainable model: parameters plus the typed handles into them.
pub struct GroundingModel {
    pub params: ParamStore,
    pub encoder: ProposalEncoder,
    pub adapter_text: Adapter,
    pub adapter_2d: Adapter,
    pub adapter_3d: Adapter,
    pub classifier: QueryClassifier,
    config: ModelConfig,
}

impl GroundingModel {
    pub fn new(config: ModelConfig) -> Result<Self, EncoderError> {
        config.encoder.validate()?;
        if config.k == 0 {
            return Err(EncoderError::InvalidConfig { reason: "K must be at least 1".into() });
        }
        let mut params = ParamStore::new();
        let encoder = ProposalEncoder::register(&config.encoder, &mut params);
        let d = config.encoder.d;
        let h = config.adapter_hidden;
        let seed = config.encoder.seed;
        let adapter_text = Adapter::register(&mut params, "adapter_text", d, h, config.alpha_text, seed);
        let adapter_2d = Adapter::register(&mut params, "adapter_2d", d, h, config.alpha_2d, seed);
        let adapter_3d = Adapter::register(&mut params, "adapter_3d", d, h, config.alpha_3d, seed);
        let classifier = QueryClassifier::register(&mut params, d, config.k, seed);
        Ok(Self { params, encoder, adapter_text, adapter_2d, adapter_3d, classifier, config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.config.encoder.d
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    /// Snapshot the current parameters into a checkpoint.
    pub fn checkpoint(&self, config_hash: u64, seed: u64, epoch: usize) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            config_hash,
            seed,
            epoch,
            tensors: self.params.snapshot(),
        }
    }

    /// Rebuild a model from a checkpoint: same construction path, then
    /// restore the stored tensors.
    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self, EncoderError> {
        let mut model = Self::new(checkpoint.config.clone())?;
        model
            .params
            .restore(&checkpoint.tensors)
            .map_err(|reason| EncoderError::InvalidConfig { reason })?;
        Ok(model)
    }

    /// Graph forward of the 3D side: proposal embeddings F3D plus the
    /// adapted A3D and residual R3D.
    pub fn forward_proposals(
        &self,
        g: &mut Graph,
        binder: &mut GraphBinder,
        scene: &Scene,
        proposals: &[Proposal],
    ) -> Scene3DNodes {
        let f3d = self.encoder.forward(g, binder, &self.params, scene, proposals);
        let (a3d, r3d) = self.adapter_3d.adapt_node(g, binder, &self.params, f3d);
        Scene3DNodes { f3d, a3d, r3d }
    }

    /// Graph forward of the text side for frozen category embeddings F^C.
    pub fn forward_categories(&self, g: &mut Graph, binder: &mut GraphBinder, f_c: &Matrix) -> TextNodes {
        let f = g.constant(f_c.clone());
        let (a, r) = self.adapter_text.adapt_node(g, binder, &self.params, f);
        TextNodes { f, a, r }
    }

    /// Graph forward of the text side for frozen query embeddings F^Q,
    /// including query classification logits I^Q.
    pub fn forward_queries(&self, g: &mut Graph, binder: &mut GraphBinder, f_q: &Matrix) -> QueryNodes {
        let f = g.constant(f_q.clone());
        let (a, r) = self.adapter_text.adapt_node(g, binder, &self.params, f);
        let i_q = self.classifier.forward_node(g, binder, &self.params, r);
        QueryNodes { f, a, r, i_q }
    }

    /// Graph forward of the 2D side for frozen region embeddings F^2D.
    pub fn forward_regions(&self, g: &mut Graph, binder: &mut GraphBinder, f_2d: &Matrix) -> TextNodes {
        let f = g.constant(f_2d.clone());
        let (a, r) = self.adapter_2d.adapt_node(g, binder, &self.params, f);
        TextNodes { f, a, r }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Scene3DNodes {
    pub f3d: NodeId,
    pub a3d: NodeId,
    pub r3d: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct TextNodes {
    pub f: NodeId,
    pub a: NodeId,
    pub r: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct QueryNodes {
    pub f: NodeId,
    pub a: NodeId,
    pub r: NodeId,
    pub i_q: NodeId,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{EncoderConfig, PointBackbone};

    fn tiny_model() -> GroundingModel {
        let encoder = EncoderConfig {
            d: 8,
            point_sample_count: 16,
            transformer_layers: 1,
            transformer_heads: 2,
            seed: 3,
            backbone: PointBackbone::SharedMlp { hidden: 8 },
            ..Default::default()
        };
        let mut config = ModelConfig::new(encoder, 4);
        config.adapter_hidden = 8;
        GroundingModel::new(config).unwrap()
    }

    #[test]
    fn checkpoint_roundtrip_restores_parameters() {
        let model = tiny_model();
        let ckpt = model.checkpoint(0xabcd, 7, 3);
        let restored = GroundingModel::from_checkpoint(&ckpt).unwrap();
        assert_eq!(model.params.checksum(), restored.params.checksum());
        assert_eq!(ckpt.epoch, 3);
    }

    #[test]
    fn fingerprint_changes_with_config() {
        let model = tiny_model();
        let base = model.config().fingerprint();
        let mut other = model.config().clone();
        other.alpha_3d = 0.25;
        assert_ne!(base, other.fingerprint());
        let mut other = model.config().clone();
        other.encoder.transformer_heads = 4;
        assert_ne!(base, other.fingerprint());
    }

    #[test]
    fn adapters_have_independent_parameters() {
        let model = tiny_model();
        let names: alloc::vec::Vec<&str> =
            model.params.entries().map(|(_, e)| e.name.as_str()).collect();
        for prefix in ["adapter_text", "adapter_2d", "adapter_3d"] {
            assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix} missing");
        }
    }
}
