//! The trainable 3D proposal encoder.
//!
//! Per proposal: sample a fixed number of points, center and scale-normalize
//! coordinates to the proposal box, run the point backbone down to one token,
//! then run all of a scene's tokens jointly through a transformer (no
//! positional encoding; proposals are an unordered set).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::fmath;
use crate::geometry::Vec3;
use crate::matrix::Matrix;
use crate::params::{
    fnv_bytes, fnv_init, glorot_uniform, ones_row, seeded_rng, zeros_row, GraphBinder, ParamGroup,
    ParamId, ParamStore,
};
use crate::scene::{Proposal, Scene};

use super::{EmbeddingSet, EncoderConfig, Modality, PointBackbone};

/// One set-abstraction level: how many centroids survive, how many neighbors
/// group around each, and the shared-MLP width.
#[derive(Clone, Debug, PartialEq)]
pub struct SaLevel {
    pub centroids: usize,
    pub neighbors: usize,
    pub hidden: usize,
}

/// Deterministically sample `count` indices from a proposal's point set:
/// uniform without replacement when enough points exist, with replacement
/// otherwise. The draw depends only on (seed, scene id, proposal id).
pub fn sample_point_indices(
    proposal: &Proposal,
    count: usize,
    seed: u64,
    scene_id: &str,
) -> Vec<usize> {
    let mut h = fnv_init();
    h = fnv_bytes(h, &seed.to_le_bytes());
    h = fnv_bytes(h, scene_id.as_bytes());
    h = fnv_bytes(h, &proposal.proposal_id.to_le_bytes());
    let mut rng = seeded_rng(h, 0x5a5a);
    let n = proposal.point_indices.len();
    if n >= count {
        // Partial Fisher-Yates: the first `count` slots become the sample.
        let mut pool: Vec<usize> = proposal.point_indices.clone();
        for i in 0..count {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    } else {
        (0..count).map(|_| proposal.point_indices[rng.random_range(0..n)]).collect()
    }
}

/// Parameter handles for one affine layer.
#[derive(Clone, Copy, Debug)]
struct AffineIds {
    w: ParamId,
    b: ParamId,
}

impl AffineIds {
    fn register(
        store: &mut ParamStore,
        rng: &mut rand_chacha::ChaCha8Rng,
        name: &str,
        rows: usize,
        cols: usize,
        group: ParamGroup,
    ) -> Self {
        let w = store.add(&alloc::format!("{name}.weight"), glorot_uniform(rng, rows, cols), group);
        let b = store.add(&alloc::format!("{name}.bias"), zeros_row(cols), group);
        Self { w, b }
    }

    fn apply(&self, g: &mut Graph, binder: &mut GraphBinder, store: &ParamStore, x: NodeId) -> NodeId {
        let w = binder.node(g, store, self.w);
        let b = binder.node(g, store, self.b);
        g.affine(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerNormIds {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNormIds {
    fn register(store: &mut ParamStore, name: &str, width: usize, group: ParamGroup) -> Self {
        let gain = store.add(&alloc::format!("{name}.gain"), ones_row(width), group);
        let bias = store.add(&alloc::format!("{name}.bias"), zeros_row(width), group);
        Self { gain, bias }
    }

    fn apply(&self, g: &mut Graph, binder: &mut GraphBinder, store: &ParamStore, x: NodeId) -> NodeId {
        let normed = g.normalize_rows(x, 1e-5);
        let gain = binder.node(g, store, self.gain);
        let bias = binder.node(g, store, self.bias);
        let scaled = g.mul_row_broadcast(normed, gain);
        g.add_row_broadcast(scaled, bias)
    }
}

#[derive(Clone, Debug)]
enum BackboneIds {
    SharedMlp {
        fc1: AffineIds,
        fc2: AffineIds,
        head: AffineIds,
    },
    SetAbstraction {
        levels: Vec<(SaLevel, AffineIds, AffineIds)>,
        head: AffineIds,
    },
}

#[derive(Clone, Debug)]
struct TransformerLayerIds {
    wq: AffineIds,
    wk: AffineIds,
    wv: AffineIds,
    wo: AffineIds,
    ln_attn: LayerNormIds,
    ffn1: AffineIds,
    ffn2: AffineIds,
    ln_ffn: LayerNormIds,
}

/// The trainable 3D encoder: registered parameters plus the graph-level
/// forward pass.
#[derive(Clone, Debug)]
pub struct ProposalEncoder {
    config: EncoderConfig,
    backbone: BackboneIds,
    layers: Vec<TransformerLayerIds>,
}

impl ProposalEncoder {
    /// Register all encoder parameters into `store` (seeded by the config).
    pub fn register(config: &EncoderConfig, store: &mut ParamStore) -> Self {
        config.validate().expect("encoder config validated upstream");
        let d = config.d;
        let mut rng = seeded_rng(config.seed, 0x3d3d);
        let backbone = match &config.backbone {
            PointBackbone::SharedMlp { hidden } => {
                let h = *hidden;
                BackboneIds::SharedMlp {
                    fc1: AffineIds::register(store, &mut rng, "backbone.fc1", 6, h, ParamGroup::Base),
                    fc2: AffineIds::register(store, &mut rng, "backbone.fc2", h, h, ParamGroup::Base),
                    head: AffineIds::register(store, &mut rng, "backbone.head", h, d, ParamGroup::Base),
                }
            }
            PointBackbone::SetAbstraction { level1, level2 } => {
                let mut levels = Vec::new();
                let mut in_width = 3 + 6; // relative xyz + previous features
                for (i, level) in [level1, level2].into_iter().enumerate() {
                    let name = alloc::format!("backbone.sa{}", i + 1);
                    let fc1 = AffineIds::register(
                        store,
                        &mut rng,
                        &alloc::format!("{name}.fc1"),
                        in_width,
                        level.hidden,
                        ParamGroup::Base,
                    );
                    let fc2 = AffineIds::register(
                        store,
                        &mut rng,
                        &alloc::format!("{name}.fc2"),
                        level.hidden,
                        level.hidden,
                        ParamGroup::Base,
                    );
                    in_width = 3 + level.hidden;
                    levels.push((level.clone(), fc1, fc2));
                }
                let last_hidden = levels.last().map(|(l, _, _)| l.hidden).unwrap();
                let head = AffineIds::register(
                    store,
                    &mut rng,
                    "backbone.head",
                    last_hidden,
                    d,
                    ParamGroup::Base,
                );
                BackboneIds::SetAbstraction { levels, head }
            }
        };
        let layers = (0..config.transformer_layers)
            .map(|l| {
                let name = alloc::format!("transformer.layer{l}");
                let group = ParamGroup::Transformer;
                TransformerLayerIds {
                    wq: AffineIds::register(store, &mut rng, &alloc::format!("{name}.attn.wq"), d, d, group),
                    wk: AffineIds::register(store, &mut rng, &alloc::format!("{name}.attn.wk"), d, d, group),
                    wv: AffineIds::register(store, &mut rng, &alloc::format!("{name}.attn.wv"), d, d, group),
                    wo: AffineIds::register(store, &mut rng, &alloc::format!("{name}.attn.wo"), d, d, group),
                    ln_attn: LayerNormIds::register(store, &alloc::format!("{name}.ln_attn"), d, group),
                    ffn1: AffineIds::register(store, &mut rng, &alloc::format!("{name}.ffn.fc1"), d, 4 * d, group),
                    ffn2: AffineIds::register(store, &mut rng, &alloc::format!("{name}.ffn.fc2"), 4 * d, d, group),
                    ln_ffn: LayerNormIds::register(store, &alloc::format!("{name}.ln_ffn"), d, group),
                }
            })
            .collect();
        Self { config: config.clone(), backbone, layers }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Graph forward over all proposals of a scene, yielding M x d proposal
    /// embeddings. Differentiable with respect to the registered parameters.
    pub fn forward(
        &self,
        g: &mut Graph,
        binder: &mut GraphBinder,
        store: &ParamStore,
        scene: &Scene,
        proposals: &[Proposal],
    ) -> NodeId {
        assert!(!proposals.is_empty(), "cannot encode zero proposals");
        let tokens: Vec<NodeId> = proposals
            .iter()
            .map(|p| self.encode_single(g, binder, store, scene, p))
            .collect();
        let mut x = g.concat_rows(&tokens);
        for layer in &self.layers {
            x = self.transformer_layer(g, binder, store, layer, x);
        }
        x
    }

    /// Backbone for one proposal: sampled, normalized points down to a 1 x d
    /// token.
    fn encode_single(
        &self,
        g: &mut Graph,
        binder: &mut GraphBinder,
        store: &ParamStore,
        scene: &Scene,
        proposal: &Proposal,
    ) -> NodeId {
        let sampled = sample_point_indices(
            proposal,
            self.config.point_sample_count,
            self.config.seed,
            &scene.scene_id,
        );
        let center = proposal.box3d.centroid();
        let diag = proposal.box3d.diagonal().max(1e-6);
        let mut coords = Vec::with_capacity(sampled.len());
        let mut feats = Matrix::zeros(sampled.len(), 6);
        for (row, &i) in sampled.iter().enumerate() {
            let p = scene.points.xyz(i).sub(center).scale(1.0 / diag);
            let rgb = scene.points.rgb(i);
            coords.push(p);
            let dst = feats.row_mut(row);
            dst[0] = p.x;
            dst[1] = p.y;
            dst[2] = p.z;
            dst[3] = rgb[0] as f64;
            dst[4] = rgb[1] as f64;
            dst[5] = rgb[2] as f64;
        }

        match &self.backbone {
            BackboneIds::SharedMlp { fc1, fc2, head } => {
                let x = g.constant(feats);
                let h1 = fc1.apply(g, binder, store, x);
                let h1 = g.relu(h1);
                let h2 = fc2.apply(g, binder, store, h1);
                let h2 = g.relu(h2);
                let pooled = g.max_pool_rows(h2);
                head.apply(g, binder, store, pooled)
            }
            BackboneIds::SetAbstraction { levels, head } => {
                let mut level_coords = coords;
                let mut level_feats = g.constant(feats);
                for (level, fc1, fc2) in levels {
                    let (next_coords, next_feats) = self.set_abstraction(
                        g, binder, store, &level_coords, level_feats, level, fc1, fc2,
                    );
                    level_coords = next_coords;
                    level_feats = next_feats;
                }
                let pooled = g.max_pool_rows(level_feats);
                head.apply(g, binder, store, pooled)
            }
        }
    }

    /// One set-abstraction level: farthest-point sample centroids, group the
    /// nearest neighbors of each, run the shared MLP over grouped rows, and
    /// max-pool within each group.
    #[allow(clippy::too_many_arguments)]
    fn set_abstraction(
        &self,
        g: &mut Graph,
        binder: &mut GraphBinder,
        store: &ParamStore,
        coords: &[Vec3],
        feats: NodeId,
        level: &SaLevel,
        fc1: &AffineIds,
        fc2: &AffineIds,
    ) -> (Vec<Vec3>, NodeId) {
        let n = coords.len();
        let c = level.centroids.min(n);
        let k = level.neighbors.min(n);
        let centroid_idx = farthest_point_sample(coords, c);

        let mut flat_idx = Vec::with_capacity(c * k);
        let mut rel = Matrix::zeros(c * k, 3);
        let mut offsets = Vec::with_capacity(c + 1);
        offsets.push(0);
        for (ci, &centroid) in centroid_idx.iter().enumerate() {
            let neighbors = k_nearest(coords, coords[centroid], k);
            for (ni, &pi) in neighbors.iter().enumerate() {
                let d = coords[pi].sub(coords[centroid]);
                let row = rel.row_mut(ci * k + ni);
                row[0] = d.x;
                row[1] = d.y;
                row[2] = d.z;
            }
            flat_idx.extend(neighbors);
            offsets.push((ci + 1) * k);
        }

        let rel_node = g.constant(rel);
        let gathered = g.gather_rows(feats, flat_idx);
        let grouped = g.concat_cols(&[rel_node, gathered]);
        let h1 = fc1.apply(g, binder, store, grouped);
        let h1 = g.relu(h1);
        let h2 = fc2.apply(g, binder, store, h1);
        let h2 = g.relu(h2);
        let pooled = g.segment_max_rows(h2, offsets);
        let next_coords = centroid_idx.into_iter().map(|i| coords[i]).collect();
        (next_coords, pooled)
    }

    fn transformer_layer(
        &self,
        g: &mut Graph,
        binder: &mut GraphBinder,
        store: &ParamStore,
        layer: &TransformerLayerIds,
        x: NodeId,
    ) -> NodeId {
        let d = self.config.d;
        let heads = self.config.transformer_heads;
        let dk = d / heads;
        let q = layer.wq.apply(g, binder, store, x);
        let k = layer.wk.apply(g, binder, store, x);
        let v = layer.wv.apply(g, binder, store, x);
        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dk, dk);
            let kh = g.slice_cols(k, h * dk, dk);
            let vh = g.slice_cols(v, h * dk, dk);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scaled = g.scale(scores, 1.0 / fmath::sqrt(dk as f64));
            let attn = g.softmax_rows(scaled);
            head_outputs.push(g.matmul(attn, vh));
        }
        let concat = g.concat_cols(&head_outputs);
        let projected = layer.wo.apply(g, binder, store, concat);
        let residual = g.add(x, projected);
        let x = layer.ln_attn.apply(g, binder, store, residual);

        let f1 = layer.ffn1.apply(g, binder, store, x);
        let f1 = g.relu(f1);
        let f2 = layer.ffn2.apply(g, binder, store, f1);
        let residual = g.add(x, f2);
        layer.ln_ffn.apply(g, binder, store, residual)
    }

    /// Plain (non-training) forward: returns the embedding set directly.
    pub fn encode_proposals(
        &self,
        store: &ParamStore,
        scene: &Scene,
        proposals: &[Proposal],
    ) -> EmbeddingSet {
        let mut g = Graph::new();
        let mut binder = GraphBinder::new(store);
        let out = self.forward(&mut g, &mut binder, store, scene, proposals);
        EmbeddingSet::new(Modality::PointProposal, g.value(out).clone())
            .expect("encoder outputs are finite")
    }
}

/// Farthest-point sampling, seeded at index 0 for determinism.
fn farthest_point_sample(coords: &[Vec3], count: usize) -> Vec<usize> {
    let n = coords.len();
    assert!(count >= 1 && count <= n);
    let mut picked = Vec::with_capacity(count);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = 0usize;
    picked.push(current);
    for _ in 1..count {
        let mut best = 0usize;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, item) in min_dist.iter_mut().enumerate() {
            let d = coords[i].sub(coords[current]).dot(coords[i].sub(coords[current]));
            if d < *item {
                *item = d;
            }
            if *item > best_dist {
                best_dist = *item;
                best = i;
            }
        }
        current = best;
        picked.push(current);
    }
    picked
}

/// Indices of the k nearest points to `center`; ties break to lower index.
fn k_nearest(coords: &[Vec3], center: Vec3, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = coords
        .iter()
        .enumerate()
        .map(|(i, &p)| (p.sub(center).dot(p.sub(center)), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(k);
    order.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_synthetic_scene;
    use alloc::collections::BTreeSet;

    fn tiny_config(backbone: PointBackbone) -> EncoderConfig {
        EncoderConfig {
            d: 8,
            point_sample_count: 16,
            transformer_layers: 1,
            transformer_heads: 2,
            seed: 3,
            backbone,
            ..Default::default()
        }
    }

    #[test]
    fn sampling_without_replacement_when_enough_points() {
        let scene = generate_synthetic_scene(5, 1, 2, 1);
        let p = &scene.proposals[0];
        assert!(p.point_indices.len() >= 300);
        let sample = sample_point_indices(p, 256, 9, &scene.scene_id);
        assert_eq!(sample.len(), 256);
        let unique: BTreeSet<usize> = sample.iter().copied().collect();
        assert_eq!(unique.len(), 256, "no duplicates when the pool is large enough");
        for i in &sample {
            assert!(p.point_indices.contains(i));
        }
    }

    #[test]
    fn sampling_with_replacement_when_short() {
        let mut scene = generate_synthetic_scene(5, 1, 2, 1);
        scene.proposals[0].point_indices.truncate(10);
        let sample = sample_point_indices(&scene.proposals[0], 64, 9, &scene.scene_id);
        assert_eq!(sample.len(), 64);
        let unique: BTreeSet<usize> = sample.iter().copied().collect();
        assert!(unique.len() <= 10);
    }

    #[test]
    fn sampling_is_deterministic() {
        let scene = generate_synthetic_scene(5, 2, 3, 1);
        let a = sample_point_indices(&scene.proposals[0], 128, 9, &scene.scene_id);
        let b = sample_point_indices(&scene.proposals[0], 128, 9, &scene.scene_id);
        assert_eq!(a, b);
        let c = sample_point_indices(&scene.proposals[1], 128, 9, &scene.scene_id);
        assert_ne!(a, c, "different proposals draw different samples");
    }

    #[test]
    fn output_shape_is_m_by_d() {
        for backbone in [
            PointBackbone::SharedMlp { hidden: 16 },
            PointBackbone::SetAbstraction {
                level1: SaLevel { centroids: 8, neighbors: 4, hidden: 12 },
                level2: SaLevel { centroids: 4, neighbors: 3, hidden: 16 },
            },
        ] {
            let config = tiny_config(backbone);
            let mut store = ParamStore::new();
            let encoder = ProposalEncoder::register(&config, &mut store);
            let scene = generate_synthetic_scene(7, 3, 4, 1);
            let out = encoder.encode_proposals(&store, &scene, &scene.proposals);
            assert_eq!((out.len(), out.d()), (3, 8));
        }
    }

    #[test]
    fn permuting_proposals_permutes_rows() {
        let config = tiny_config(PointBackbone::SharedMlp { hidden: 16 });
        let mut store = ParamStore::new();
        let encoder = ProposalEncoder::register(&config, &mut store);
        let scene = generate_synthetic_scene(7, 4, 5, 1);
        let base = encoder.encode_proposals(&store, &scene, &scene.proposals);
        let permutation = [2usize, 0, 3, 1];
        let permuted_proposals: Vec<_> =
            permutation.iter().map(|&i| scene.proposals[i].clone()).collect();
        let permuted = encoder.encode_proposals(&store, &scene, &permuted_proposals);
        for (out_row, &src) in permutation.iter().enumerate() {
            for c in 0..8 {
                let a = permuted.vectors.get(out_row, c);
                let b = base.vectors.get(src, c);
                assert!(
                    (a - b).abs() < 1e-9,
                    "row {out_row} col {c}: {a} vs {b} (permutation equivariance)"
                );
            }
        }
    }

    #[test]
    fn farthest_point_sample_spreads() {
        let coords = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(0.0, 5.0, 0.0),
        ];
        let picked = farthest_point_sample(&coords, 3);
        assert_eq!(picked[0], 0);
        // The two far points must be chosen before the nearby duplicate.
        assert!(picked.contains(&2) && picked.contains(&3));
    }

    #[test]
    fn k_nearest_is_deterministic_on_ties() {
        let coords = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let n = k_nearest(&coords, Vec3::new(0.0, 0.0, 0.0), 2);
        assert_eq!(n, vec![0, 1], "equal distances resolve to lower indices");
    }
}
