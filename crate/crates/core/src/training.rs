//! Optimization loop over scene batches: per-scene loss graphs, adaptive
//! moment updates with a stepwise-decayed learning-rate schedule, and the
//! frozen-encoder / no-box-annotation contracts enforced at runtime.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{Graph, NodeId};
use crate::encoders::{EncoderError, Modality, Providers};
use crate::losses::{
    classification_loss_node, contrastive_loss_node, loss_report, LossError, LossReport,
    LossWeights,
};
use crate::matrix::Matrix;
use crate::model::{Checkpoint, GroundingModel};
use crate::params::{fnv_bytes, fnv_init, seeded_rng, AdamHyperParams, GraphBinder};
use crate::projection::{best_frame_region, ExtensionMode, Region2D};
use crate::scene::{CategoryVocabulary, Scene};

/// Training hyperparameters. Defaults follow the reference recipe: batches
/// of 32 scenes, Adam at 0.0005 with the transformer at a tenth of that, and
/// 0.65x decay at epochs 20, 30, 40 and 50.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size_scenes: usize,
    pub base_lr: f64,
    pub transformer_lr_multiplier: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size_scenes: 32,
            base_lr: 0.0005,
            transformer_lr_multiplier: 0.1,
            decay_factor: 0.65,
            decay_epochs: alloc::vec![20, 30, 40, 50],
            max_epochs: 60,
            seed: 0,
            loss_weights: LossWeights::default(),
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.base_lr > 0.0) {
            return Err(TrainError::InvalidConfig { reason: "base_lr must be positive".into() });
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(TrainError::InvalidConfig {
                reason: "decay_factor must lie in (0, 1]".into(),
            });
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(TrainError::InvalidConfig {
                reason: "decay_epochs must be strictly increasing".into(),
            });
        }
        if self.batch_size_scenes == 0 {
            return Err(TrainError::InvalidConfig {
                reason: "batch_size_scenes must be at least 1".into(),
            });
        }
        self.loss_weights.validate()?;
        Ok(())
    }

    /// Digest over the training hyperparameters; combined with the model
    /// fingerprint it stamps every artifact of a run.
    pub fn fingerprint(&self) -> u64 {
        let mut h = fnv_init();
        for v in [
            self.batch_size_scenes as u64,
            self.max_epochs as u64,
            self.seed,
            self.grad_clip.is_some() as u64,
        ] {
            h = fnv_bytes(h, &v.to_le_bytes());
        }
        for v in [
            self.base_lr,
            self.transformer_lr_multiplier,
            self.decay_factor,
            self.grad_clip.unwrap_or(0.0),
            self.loss_weights.lambda1,
            self.loss_weights.lambda2,
            self.loss_weights.lambda3,
            self.loss_weights.lambda4,
            self.loss_weights.tau,
        ] {
            h = fnv_bytes(h, &v.to_le_bytes());
        }
        for e in &self.decay_epochs {
            h = fnv_bytes(h, &(*e as u64).to_le_bytes());
        }
        h
    }
}

/// Learning-rate group selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrGroup {
    Base,
    Transformer,
}

/// Stepwise-decayed learning rate: the group's base rate times
/// `decay_factor^(number of decay epochs <= epoch)`, applied as the
/// scheduler would apply it — one multiplication per passed boundary.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize, group: LrGroup) -> f64 {
    let mut lr = match group {
        LrGroup::Base => config.base_lr,
        LrGroup::Transformer => config.base_lr * config.transformer_lr_multiplier,
    };
    for _ in config.decay_epochs.iter().filter(|&&e| e <= epoch) {
        lr *= config.decay_factor;
    }
    lr
}

/// One scene prepared for training: per-proposal best regions and their
/// frozen 2D embeddings. Proposals without a region (or whose crop failed to
/// encode) carry `None` and are excluded from the paired losses.
#[derive(Clone, Debug)]
pub struct TrainingScene {
    pub scene: Scene,
    pub regions: Vec<Option<Region2D>>,
    pub f2d: Vec<Option<Vec<f64>>>,
}

impl TrainingScene {
    /// Project every proposal, pick best frames, and encode the region crops
    /// with the frozen image provider.
    pub fn prepare(
        scene: Scene,
        providers: &Providers,
        extension_mode: ExtensionMode,
        use_depth_visibility: bool,
    ) -> Self {
        let regions: Vec<Option<Region2D>> = scene
            .proposals
            .iter()
            .map(|p| best_frame_region(p, &scene, extension_mode, use_depth_visibility))
            .collect();
        let f2d = encode_region_embeddings(&scene, &regions, providers);
        Self { scene, regions, f2d }
    }

    /// Build from an existing region cache (offline preprocessing path).
    pub fn from_cached_regions(
        scene: Scene,
        regions: Vec<Option<Region2D>>,
        providers: &Providers,
    ) -> Self {
        let f2d = encode_region_embeddings(&scene, &regions, providers);
        Self { scene, regions, f2d }
    }

    /// Proposal indices that have both a region and a 2D embedding.
    pub fn paired_indices(&self) -> Vec<usize> {
        (0..self.scene.proposals.len()).filter(|&i| self.f2d[i].is_some()).collect()
    }
}

fn encode_region_embeddings(
    scene: &Scene,
    regions: &[Option<Region2D>],
    providers: &Providers,
) -> Vec<Option<Vec<f64>>> {
    let present: Vec<(usize, Region2D)> =
        regions.iter().enumerate().filter_map(|(i, r)| r.map(|r| (i, r))).collect();
    let region_list: Vec<Region2D> = present.iter().map(|(_, r)| *r).collect();
    let encoded = providers.image.encode_regions(&scene.frames, &region_list);
    let mut out: Vec<Option<Vec<f64>>> = alloc::vec![None; regions.len()];
    for ((i, _), result) in present.into_iter().zip(encoded) {
        match result {
            Ok(v) => out[i] = Some(v),
            Err(err) => log::warn!(
                "scene {}: proposal {} region failed to encode ({err}); excluded from paired losses",
                scene.scene_id,
                scene.proposals[i].proposal_id
            ),
        }
    }
    out
}

/// One optimizer step's loss components (batch mean) and learning rates.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub report: LossReport,
    pub lr_base: f64,
    pub lr_transformer: f64,
}

/// Per-epoch summary emitted alongside the checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_total: f64,
    pub steps: u64,
}

/// Sink for training events; the IO layer writes logs and checkpoint files,
/// tests collect in memory.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_epoch_end(&mut self, _summary: &EpochSummary, _checkpoint: &Checkpoint) {}
}

/// Observer that discards everything.
pub struct NullObserver;

impl TrainObserver for NullObserver {}

/// Observer that keeps all step records and epoch summaries in memory.
#[derive(Default)]
pub struct MemoryObserver {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainObserver for MemoryObserver {
    fn on_step(&mut self, record: &StepRecord) {
        self.steps.push(record.clone());
    }

    fn on_epoch_end(&mut self, summary: &EpochSummary, _checkpoint: &Checkpoint) {
        self.epochs.push(summary.clone());
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid train config: {reason}")]
    InvalidConfig { reason: String },
    #[error("no scenes to train on")]
    NoScenes,
    #[error("at step {step}: {source}")]
    NonFiniteLoss { step: u64, source: LossError },
    #[error("frozen provider parameters changed during training")]
    FrozenProviderMutated,
    #[error("weak-supervision audit: target_proposal_id was read during training")]
    WeakSupervisionViolated,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Outcome of a training run: the final checkpoint plus per-epoch mean
/// totals (epoch 0 first).
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epoch_mean_totals: Vec<f64>,
    pub config_hash: u64,
}

/// Loss components of one scene, as graph nodes where gradients flow and
/// plain values for reporting.
struct SceneLoss {
    total_node: NodeId,
    report: LossReport,
}

/// Train the model over prepared scenes. Deterministic given the config
/// seed: scene order, point sampling and initialization are all derived from
/// it. Only the 3D encoder, adapters and query classifier receive updates;
/// frozen-provider checksums and the target-id access audit are verified
/// before returning.
pub fn train(
    model: &mut GroundingModel,
    scenes: &[TrainingScene],
    vocab: &CategoryVocabulary,
    providers: &Providers,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    let config_hash = model.config().fingerprint() ^ config.fingerprint().rotate_left(23);
    let provider_checksum = providers.checksum();
    let audit_before: u64 = scenes.iter().map(|s| s.scene.target_read_count()).sum();

    // Frozen embeddings are deterministic; compute them once.
    let labels: Vec<&str> = vocab.labels().iter().map(String::as_str).collect();
    let f_c = providers.text.encode_text(&labels, Modality::TextCategory)?.vectors;
    let f_q_per_scene: Vec<Matrix> = scenes
        .iter()
        .map(|s| {
            let texts: Vec<&str> = s.scene.queries.iter().map(|q| q.text.as_str()).collect();
            providers.text.encode_text(&texts, Modality::TextQuery).map(|set| set.vectors)
        })
        .collect::<Result<_, _>>()?;

    let mut step: u64 = 0;
    let mut epoch_mean_totals = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let lr_base = lr_at_epoch(config, epoch, LrGroup::Base);
        let lr_transformer = lr_at_epoch(config, epoch, LrGroup::Transformer);
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut rng = seeded_rng(config.seed, 0xe10c ^ epoch as u64);
        order.shuffle(&mut rng);

        let mut epoch_total = 0.0;
        let mut epoch_steps = 0u64;
        for batch in order.chunks(config.batch_size_scenes) {
            model.params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut sum = LossReport { l_e: 0.0, l_a: 0.0, l_cls_2d: 0.0, l_cls_3d: 0.0, l_cls_q: 0.0, total: 0.0 };
            for &scene_idx in batch {
                let ts = &scenes[scene_idx];
                let mut g = Graph::new();
                let mut binder = GraphBinder::new(&model.params);
                let scene_loss = scene_loss_graph(
                    model,
                    &mut g,
                    &mut binder,
                    ts,
                    &f_c,
                    &f_q_per_scene[scene_idx],
                    &config.loss_weights,
                )
                .map_err(|source| TrainError::NonFiniteLoss { step, source })?;
                let grads = g.backward(scene_loss.total_node, scale);
                binder.accumulate(&grads, &mut model.params, 1.0);
                sum.l_e += scene_loss.report.l_e * scale;
                sum.l_a += scene_loss.report.l_a * scale;
                sum.l_cls_2d += scene_loss.report.l_cls_2d * scale;
                sum.l_cls_3d += scene_loss.report.l_cls_3d * scale;
                sum.l_cls_q += scene_loss.report.l_cls_q * scale;
                sum.total += scene_loss.report.total * scale;
            }
            if let Some(clip) = config.grad_clip {
                model.params.clip_grad_norm(clip);
            }
            model.params.adam_step(lr_base, lr_transformer, &AdamHyperParams::default());
            step += 1;
            epoch_total += sum.total;
            epoch_steps += 1;
            observer.on_step(&StepRecord { step, epoch, report: sum, lr_base, lr_transformer });
        }

        let summary = EpochSummary {
            epoch,
            mean_total: epoch_total / epoch_steps as f64,
            steps: epoch_steps,
        };
        epoch_mean_totals.push(summary.mean_total);
        let checkpoint = model.checkpoint(config_hash, config.seed, epoch);
        observer.on_epoch_end(&summary, &checkpoint);

        if providers.checksum() != provider_checksum {
            return Err(TrainError::FrozenProviderMutated);
        }
        let audit_now: u64 = scenes.iter().map(|s| s.scene.target_read_count()).sum();
        if audit_now != audit_before {
            return Err(TrainError::WeakSupervisionViolated);
        }
    }

    Ok(TrainOutcome {
        checkpoint: model.checkpoint(config_hash, config.seed, config.max_epochs.saturating_sub(1)),
        epoch_mean_totals,
        config_hash,
    })
}

/// Forward-only total loss of one scene; used by diagnostics and the
/// finite-difference gradient checks.
pub fn scene_loss(
    model: &GroundingModel,
    ts: &TrainingScene,
    f_c: &Matrix,
    f_q: &Matrix,
    weights: &LossWeights,
) -> Result<LossReport, LossError> {
    let mut g = Graph::new();
    let mut binder = GraphBinder::new(&model.params);
    let loss = scene_loss_graph(model, &mut g, &mut binder, ts, f_c, f_q, weights)?;
    Ok(loss.report)
}

/// Forward and backward over one scene: zeroes the store's gradients, runs
/// backpropagation from the weighted total, and accumulates the gradients of
/// every trainable parameter.
pub fn scene_loss_with_gradients(
    model: &mut GroundingModel,
    ts: &TrainingScene,
    f_c: &Matrix,
    f_q: &Matrix,
    weights: &LossWeights,
) -> Result<LossReport, LossError> {
    let mut g = Graph::new();
    let mut binder = GraphBinder::new(&model.params);
    let loss = scene_loss_graph(model, &mut g, &mut binder, ts, f_c, f_q, weights)?;
    model.params.zero_grads();
    let grads = g.backward(loss.total_node, 1.0);
    binder.accumulate(&grads, &mut model.params, 1.0);
    Ok(loss.report)
}

/// Frozen category embeddings F^C for a vocabulary.
pub fn encode_category_embeddings(
    providers: &Providers,
    vocab: &CategoryVocabulary,
) -> Result<Matrix, EncoderError> {
    let labels: Vec<&str> = vocab.labels().iter().map(String::as_str).collect();
    Ok(providers.text.encode_text(&labels, Modality::TextCategory)?.vectors)
}

/// Frozen query embeddings F^Q for one scene's queries.
pub fn encode_query_embeddings(
    providers: &Providers,
    scene: &Scene,
) -> Result<Matrix, EncoderError> {
    let texts: Vec<&str> = scene.queries.iter().map(|q| q.text.as_str()).collect();
    Ok(providers.text.encode_text(&texts, Modality::TextQuery)?.vectors)
}

/// Assemble the full per-scene loss graph.
///
/// Pairing: proposals with a 2D embedding enter the two contrastive terms
/// and the 2D classification loss; every labeled proposal enters the 3D
/// classification loss; every query enters the query classification loss.
/// Absent components — and components whose weight is zero (ablated terms)
/// — contribute 0 and no gradient.
fn scene_loss_graph(
    model: &GroundingModel,
    g: &mut Graph,
    binder: &mut GraphBinder,
    ts: &TrainingScene,
    f_c: &Matrix,
    f_q: &Matrix,
    weights: &LossWeights,
) -> Result<SceneLoss, LossError> {
    let scene = &ts.scene;
    let nodes3d = model.forward_proposals(g, binder, scene, &scene.proposals);
    let cats = model.forward_categories(g, binder, f_c);
    let r_c_t = g.transpose(cats.r);

    let paired = ts.paired_indices();
    let mut l_e_node = None;
    let mut l_a_node = None;
    let mut l_cls_2d_node = None;

    if paired.is_empty() {
        log::warn!("scene {}: no paired proposals; contrastive terms are 0", scene.scene_id);
    } else if weights.lambda1 > 0.0 || weights.lambda2 > 0.0 {
        let mut f2d_rows = Matrix::zeros(paired.len(), model.d());
        for (row, &i) in paired.iter().enumerate() {
            f2d_rows.row_mut(row).copy_from_slice(ts.f2d[i].as_ref().expect("paired"));
        }
        let regions2d = model.forward_regions(g, binder, &f2d_rows);
        if weights.lambda1 > 0.0 {
            let f3d_paired = g.gather_rows(nodes3d.f3d, paired.clone());
            let a3d_paired = g.gather_rows(nodes3d.a3d, paired.clone());
            let normalize = model.config().normalize;
            l_e_node =
                Some(contrastive_loss_node(g, regions2d.f, f3d_paired, weights.tau, normalize));
            l_a_node =
                Some(contrastive_loss_node(g, regions2d.a, a3d_paired, weights.tau, normalize));
        }

        // 2D task-aware classification over labeled paired proposals.
        let labeled2d: Vec<(usize, usize)> = paired
            .iter()
            .enumerate()
            .filter_map(|(row, &i)| scene.proposals[i].category_id.map(|c| (row, c as usize)))
            .collect();
        if weights.lambda2 > 0.0 && !labeled2d.is_empty() {
            let rows: Vec<usize> = labeled2d.iter().map(|(row, _)| *row).collect();
            let labels: Vec<usize> = labeled2d.iter().map(|(_, c)| *c).collect();
            let r2d_labeled = g.gather_rows(regions2d.r, rows);
            let i2d = g.matmul(r2d_labeled, r_c_t);
            l_cls_2d_node = Some(classification_loss_node(g, i2d, labels));
        }
    }

    // 3D task-aware classification over every labeled proposal.
    let labeled3d: Vec<(usize, usize)> = scene
        .proposals
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.category_id.map(|c| (i, c as usize)))
        .collect();
    let l_cls_3d_node = if weights.lambda3 == 0.0 || labeled3d.is_empty() {
        None
    } else {
        let rows: Vec<usize> = labeled3d.iter().map(|(i, _)| *i).collect();
        let labels: Vec<usize> = labeled3d.iter().map(|(_, c)| *c).collect();
        let r3d_labeled = g.gather_rows(nodes3d.r3d, rows);
        let i3d = g.matmul(r3d_labeled, r_c_t);
        Some(classification_loss_node(g, i3d, labels))
    };

    // Query classification.
    let l_cls_q_node = if weights.lambda4 == 0.0 || scene.queries.is_empty() {
        None
    } else {
        let queries = model.forward_queries(g, binder, f_q);
        let labels: Vec<usize> =
            scene.queries.iter().map(|q| q.target_category_id as usize).collect();
        Some(classification_loss_node(g, queries.i_q, labels))
    };

    let mut terms: Vec<(NodeId, f64)> = Vec::new();
    for (node, weight) in [
        (l_e_node, weights.lambda1),
        (l_a_node, weights.lambda1),
        (l_cls_2d_node, weights.lambda2),
        (l_cls_3d_node, weights.lambda3),
        (l_cls_q_node, weights.lambda4),
    ] {
        if let Some(node) = node {
            terms.push((node, weight));
        }
    }
    let total_node = g.weighted_sum(&terms);

    let value = |n: Option<NodeId>| n.map_or(0.0, |n| g.value(n).as_scalar());
    let report = loss_report(
        value(l_e_node),
        value(l_a_node),
        value(l_cls_2d_node),
        value(l_cls_3d_node),
        value(l_cls_q_node),
        weights,
    )?;
    debug_assert!(
        (report.total - g.value(total_node).as_scalar()).abs() < 1e-9,
        "report total must match graph total"
    );
    Ok(SceneLoss { total_node, report })
}
