//! Per-modality adapters with residual mixing, the query text classifier,
//! and task-aware classification logits against adapted category embeddings.
//!
//! Each adapter is two affine layers with a ReLU between them; its output
//! `A` is mixed back with the frozen input as `R = alpha * A + (1 - alpha) * F`.
//! Three adapters exist (text, 2D, 3D) with independent parameters; the text
//! adapter processes both query and category embeddings.

use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId};
use crate::matrix::Matrix;
use crate::params::{glorot_uniform, seeded_rng, zeros_row, GraphBinder, ParamGroup, ParamId, ParamStore};

/// Default residual ratio; shared by all three adapters unless configured
/// per-adapter.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Which classification head produced a logits block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogitsSource {
    Query,
    Region2D,
    Proposal3D,
}

/// n x K classification logits; softmax is applied downstream by losses and
/// inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationLogits {
    pub source: LogitsSource,
    pub logits: Matrix,
}

impl ClassificationLogits {
    pub fn new(source: LogitsSource, logits: Matrix) -> Self {
        assert!(logits.is_finite(), "classification logits must be finite");
        Self { source, logits }
    }

    /// Row-wise argmax; ties break to the lower category id.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.logits.rows())
            .map(|r| {
                let row = self.logits.row(r);
                let mut best = 0usize;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Category ids of the k largest logits in row `r`, largest first; ties
    /// break to the lower id. `k` is clamped to K.
    pub fn topk_row(&self, r: usize, k: usize) -> Vec<usize> {
        let row = self.logits.row(r);
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        order.truncate(k.min(row.len()));
        order
    }
}

/// One adapter: fc -> relu -> fc with residual ratio `alpha`.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub alpha: f64,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    width: usize,
}

impl Adapter {
    /// Register adapter parameters. `hidden` defaults to the embedding width
    /// in the standard configuration.
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        hidden: usize,
        alpha: f64,
        seed: u64,
    ) -> Self {
        assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1]");
        let mut rng = seeded_rng(seed, crate::params::fnv_bytes(crate::params::fnv_init(), name.as_bytes()));
        let fc1_w = store.add(&alloc::format!("{name}.fc1.weight"), glorot_uniform(&mut rng, d, hidden), ParamGroup::Base);
        let fc1_b = store.add(&alloc::format!("{name}.fc1.bias"), zeros_row(hidden), ParamGroup::Base);
        let fc2_w = store.add(&alloc::format!("{name}.fc2.weight"), glorot_uniform(&mut rng, hidden, d), ParamGroup::Base);
        let fc2_b = store.add(&alloc::format!("{name}.fc2.bias"), zeros_row(d), ParamGroup::Base);
        Self { alpha, fc1_w, fc1_b, fc2_w, fc2_b, width: d }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Graph forward: returns `(A, R)` where `A` is the adapter output and
    /// `R = alpha * A + (1 - alpha) * F`.
    pub fn adapt_node(
        &self,
        g: &mut Graph,
        binder: &mut GraphBinder,
        store: &ParamStore,
        f: NodeId,
    ) -> (NodeId, NodeId) {
        assert_eq!(g.value(f).cols(), self.width, "adapter width mismatch");
        let w1 = binder.node(g, store, self.fc1_w);
        let b1 = binder.node(g, store, self.fc1_b);
        let w2 = binder.node(g, store, self.fc2_w);
        let b2 = binder.node(g, store, self.fc2_b);
        let h = g.affine(f, w1, b1);
        let h = g.relu(h);
        let a = g.affine(h, w2, b2);
        let scaled_a = g.scale(a, self.alpha);
        let scaled_f = g.scale(f, 1.0 - self.alpha);
        let r = g.add(scaled_a, scaled_f);
        (a, r)
    }

    /// Plain forward for inference and tests.
    pub fn adapt(&self, store: &ParamStore, f: &Matrix) -> (Matrix, Matrix) {
        let mut g = Graph::new();
        let mut binder = GraphBinder::new(store);
        let input = g.constant(f.clone());
        let (a, r) = self.adapt_node(&mut g, &mut binder, store, input);
        (g.value(a).clone(), g.value(r).clone())
    }
}

/// Task-aware classification: logits = R_modality · R_Cᵀ.
pub fn classify_against_categories_node(g: &mut Graph, r_modality: NodeId, r_categories: NodeId) -> NodeId {
    assert_eq!(
        g.value(r_modality).cols(),
        g.value(r_categories).cols(),
        "embedding width mismatch"
    );
    let ct = g.transpose(r_categories);
    g.matmul(r_modality, ct)
}

/// Plain-matrix version of [`classify_against_categories_node`].
pub fn classify_against_categories(
    r_modality: &Matrix,
    r_categories: &Matrix,
    source: LogitsSource,
) -> ClassificationLogits {
    assert_eq!(r_modality.cols(), r_categories.cols(), "embedding width mismatch");
    ClassificationLogits::new(source, r_modality.matmul(&r_categories.transpose()))
}

/// Single affine map d -> K over the residual query embedding.
#[derive(Clone, Debug)]
pub struct QueryClassifier {
    w: ParamId,
    b: ParamId,
}

impl QueryClassifier {
    pub fn register(store: &mut ParamStore, d: usize, k: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, 0x9c1f);
        let w = store.add("query_classifier.weight", glorot_uniform(&mut rng, d, k), ParamGroup::Base);
        let b = store.add("query_classifier.bias", zeros_row(k), ParamGroup::Base);
        Self { w, b }
    }

    pub fn forward_node(
        &self,
        g: &mut Graph,
        binder: &mut GraphBinder,
        store: &ParamStore,
        r_query: NodeId,
    ) -> NodeId {
        let w = binder.node(g, store, self.w);
        let b = binder.node(g, store, self.b);
        g.affine(r_query, w, b)
    }

    pub fn classify(&self, store: &ParamStore, r_query: &Matrix) -> ClassificationLogits {
        let mut g = Graph::new();
        let mut binder = GraphBinder::new(store);
        let input = g.constant(r_query.clone());
        let out = self.forward_node(&mut g, &mut binder, store, input);
        ClassificationLogits::new(LogitsSource::Query, g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn softmax(row: &[f64]) -> Vec<f64> {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| fmath::exp(v - max)).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    fn adapter_with_alpha(alpha: f64) -> (ParamStore, Adapter) {
        let mut store = ParamStore::new();
        let adapter = Adapter::register(&mut store, "adapter_test", 4, 4, alpha, 11);
        (store, adapter)
    }

    #[test]
    fn alpha_zero_returns_input_exactly() {
        let (store, adapter) = adapter_with_alpha(0.0);
        let f = Matrix::from_rows(&[&[1.0, -2.0, 0.5, 3.0], &[0.0, 0.0, 0.0, 0.0]]);
        let (_, r) = adapter.adapt(&store, &f);
        assert_eq!(r, f);
    }

    #[test]
    fn alpha_one_returns_adapter_output_exactly() {
        let (store, adapter) = adapter_with_alpha(1.0);
        let f = Matrix::from_rows(&[&[1.0, -2.0, 0.5, 3.0]]);
        let (a, r) = adapter.adapt(&store, &f);
        assert_eq!(r, a);
    }

    #[test]
    fn residual_is_convex_combination() {
        let (store, adapter) = adapter_with_alpha(0.5);
        let f = Matrix::from_rows(&[&[2.0, 0.0, -1.0, 4.0], &[0.3, 0.7, 0.0, -2.5]]);
        let (a, r) = adapter.adapt(&store, &f);
        for row in 0..f.rows() {
            for col in 0..f.cols() {
                let expect = 0.5 * a.get(row, col) + 0.5 * f.get(row, col);
                assert!((r.get(row, col) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adapt_is_row_wise() {
        let (store, adapter) = adapter_with_alpha(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Matrix::from_vec(3, 4, data);
        let (a, r) = adapter.adapt(&store, &f);
        let perm = [2usize, 0, 1];
        let rows: Vec<&[f64]> = perm.iter().map(|&i| f.row(i)).collect();
        let permuted_f = Matrix::from_rows(&rows);
        let (pa, pr) = adapter.adapt(&store, &permuted_f);
        for (out_row, &src) in perm.iter().enumerate() {
            assert_eq!(pa.row(out_row), a.row(src));
            assert_eq!(pr.row(out_row), r.row(src));
        }
    }

    #[test]
    fn classify_matches_hand_softmax() {
        // R_C rows are basis vectors, so logits echo the embedding row.
        let r_c = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = Matrix::from_rows(&[&[3.0, 4.0]]);
        let logits = classify_against_categories(&r, &r_c, LogitsSource::Region2D);
        assert_eq!(logits.logits.row(0), &[3.0, 4.0]);
        let probs = softmax(logits.logits.row(0));
        assert!((probs[0] - 0.2689).abs() < 1e-4);
        assert!((probs[1] - 0.7311).abs() < 1e-4);
        assert_eq!(logits.argmax_rows(), vec![1]);
    }

    #[test]
    fn orthogonal_row_gives_uniform_softmax() {
        let r_c = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let r = Matrix::from_rows(&[&[0.0, 0.0, 5.0]]);
        let logits = classify_against_categories(&r, &r_c, LogitsSource::Proposal3D);
        let probs = softmax(logits.logits.row(0));
        assert!((probs[0] - 0.5).abs() < 1e-12);
        assert!((probs[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_modality_rows_give_empty_logits() {
        let r_c = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = Matrix::zeros(0, 2);
        let logits = classify_against_categories(&r, &r_c, LogitsSource::Region2D);
        assert_eq!(logits.logits.shape(), (0, 2));
    }

    #[test]
    fn argmax_invariant_under_positive_row_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let r_c = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
            let r = Matrix::from_vec(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
            let scale = rng.random_range(0.01..100.0);
            let a = classify_against_categories(&r, &r_c, LogitsSource::Proposal3D);
            let b = classify_against_categories(&r.scale(scale), &r_c, LogitsSource::Proposal3D);
            assert_eq!(a.argmax_rows(), b.argmax_rows());
        }
    }

    #[test]
    fn zero_classifier_gives_uniform_logits() {
        let mut store = ParamStore::new();
        let classifier = QueryClassifier::register(&mut store, 4, 3, 5);
        // Zero out the seeded weights.
        for name in ["query_classifier.weight", "query_classifier.bias"] {
            let id = store.by_name(name).unwrap();
            for v in store.value_mut(id).values_mut() {
                *v = 0.0;
            }
        }
        let logits = classifier.classify(&store, &Matrix::from_rows(&[&[1.0, 2.0, 3.0, 4.0]]));
        assert_eq!(logits.logits.row(0), &[0.0, 0.0, 0.0]);
        let probs = softmax(logits.logits.row(0));
        for p in probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_dominates_zero_weights() {
        let mut store = ParamStore::new();
        let classifier = QueryClassifier::register(&mut store, 4, 3, 5);
        let wid = store.by_name("query_classifier.weight").unwrap();
        for v in store.value_mut(wid).values_mut() {
            *v = 0.0;
        }
        let bid = store.by_name("query_classifier.bias").unwrap();
        store.value_mut(bid).values_mut().copy_from_slice(&[10.0, 0.0, 0.0]);
        let logits = classifier.classify(&store, &Matrix::from_rows(&[&[1.0, -1.0, 2.0, 0.5]]));
        assert_eq!(logits.argmax_rows(), vec![0]);
    }

    #[test]
    fn seeded_classifier_is_reproducible() {
        let mut store_a = ParamStore::new();
        let ca = QueryClassifier::register(&mut store_a, 4, 3, 5);
        let mut store_b = ParamStore::new();
        let cb = QueryClassifier::register(&mut store_b, 4, 3, 5);
        let r_q = Matrix::from_rows(&[&[0.1, 0.2, 0.3, 0.4]]);
        assert_eq!(ca.classify(&store_a, &r_q), cb.classify(&store_b, &r_q));
    }

    #[test]
    fn topk_orders_by_logit_then_id() {
        let logits = ClassificationLogits::new(
            LogitsSource::Query,
            Matrix::from_rows(&[&[0.5, 2.0, 2.0, -1.0]]),
        );
        assert_eq!(logits.topk_row(0, 3), vec![1, 2, 0]);
        assert_eq!(logits.topk_row(0, 10), vec![1, 2, 0, 3], "k clamps to K");
    }
}
