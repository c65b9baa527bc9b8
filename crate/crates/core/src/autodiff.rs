//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass; [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients. The op set is exactly
//! what the proposal encoder, adapters and losses need: affine layers,
//! row-wise nonlinearities, attention building blocks, gather/segment pooling
//! for set abstraction, and a fused softmax cross-entropy.
//!
//! Gradients only ever flow into leaves created with [`Graph::param`]; scene
//! data (points, frozen embeddings) enters as constants.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant input; no gradient tracked.
    Constant,
    /// Trainable leaf; gradient retrievable after backward.
    Param,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `a + row` where `row` is 1xC broadcast over the rows of `a`.
    AddRowBroadcast(NodeId, NodeId),
    /// `a * row` elementwise, `row` broadcast over rows.
    MulRowBroadcast(NodeId, NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    L2NormalizeRows {
        input: NodeId,
        norms: Vec<f64>,
    },
    /// Row-wise standardization `(x - mean) / sqrt(var + eps)`.
    NormalizeRows {
        input: NodeId,
        inv_std: Vec<f64>,
    },
    /// Column-wise max over all rows, yielding 1xC. Ties keep the lowest row.
    MaxPoolRows {
        input: NodeId,
        argmax: Vec<usize>,
    },
    /// Column-wise max within consecutive row segments. `offsets` has one
    /// entry per segment boundary, starting at 0 and ending at `rows`.
    SegmentMaxRows {
        input: NodeId,
        offsets: Vec<usize>,
        argmax: Vec<usize>,
    },
    GatherRows {
        input: NodeId,
        indices: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    MeanAll(NodeId),
    /// Weighted sum of 1x1 scalars.
    WeightedSum(Vec<(NodeId, f64)>),
    /// Mean over rows of `logsumexp(row) - row[label]`.
    CrossEntropyMeanRows {
        logits: NodeId,
        labels: Vec<usize>,
        softmax: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Param)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).add(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (m, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), m.cols());
        let mut value = m.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.row(0)) {
                *v += b;
            }
        }
        self.push(value, Op::AddRowBroadcast(a, row))
    }

    pub fn mul_row_broadcast(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (m, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), m.cols());
        let mut value = m.clone();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(r.row(0)) {
                *v *= b;
            }
        }
        self.push(value, Op::MulRowBroadcast(a, row))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for v in value.values_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let mut norms = Vec::with_capacity(m.rows());
        let mut value = m.clone();
        for r in 0..m.rows() {
            let norm = fmath::sqrt(m.row(r).iter().map(|v| v * v).sum::<f64>());
            norms.push(norm);
            if norm > 0.0 {
                for v in value.row_mut(r) {
                    *v /= norm;
                }
            }
        }
        self.push(value, Op::L2NormalizeRows { input: a, norms })
    }

    pub fn normalize_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let m = self.value(a);
        let c = m.cols() as f64;
        let mut inv_std = Vec::with_capacity(m.rows());
        let mut value = m.clone();
        for r in 0..m.rows() {
            let row = m.row(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let is = 1.0 / fmath::sqrt(var + eps);
            inv_std.push(is);
            for v in value.row_mut(r) {
                *v = (*v - mean) * is;
            }
        }
        self.push(value, Op::NormalizeRows { input: a, inv_std })
    }

    pub fn max_pool_rows(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        assert!(m.rows() > 0, "max pool over empty matrix");
        let (value, argmax) = column_max(m, 0, m.rows());
        self.push(value, Op::MaxPoolRows { input: a, argmax })
    }

    pub fn segment_max_rows(&mut self, a: NodeId, offsets: Vec<usize>) -> NodeId {
        let m = self.value(a);
        assert!(offsets.len() >= 2 && offsets[0] == 0 && *offsets.last().unwrap() == m.rows());
        let segments = offsets.len() - 1;
        let mut value = Matrix::zeros(segments, m.cols());
        let mut argmax = Vec::with_capacity(segments * m.cols());
        for s in 0..segments {
            assert!(offsets[s] < offsets[s + 1], "empty segment");
            let (seg_max, seg_arg) = column_max(m, offsets[s], offsets[s + 1]);
            value.row_mut(s).copy_from_slice(seg_max.row(0));
            argmax.extend_from_slice(&seg_arg);
        }
        self.push(value, Op::SegmentMaxRows { input: a, offsets, argmax })
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let m = self.value(a);
        let mut value = Matrix::zeros(indices.len(), m.cols());
        for (out_r, &src_r) in indices.iter().enumerate() {
            value.row_mut(out_r).copy_from_slice(m.row(src_r));
        }
        self.push(value, Op::GatherRows { input: a, indices })
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols);
            for r in 0..m.rows() {
                value.row_mut(at).copy_from_slice(m.row(r));
                at += 1;
            }
        }
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows);
            for r in 0..m.rows() {
                value.row_mut(r)[at..at + m.cols()].copy_from_slice(m.row(r));
            }
            at += m.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let m = self.value(a);
        assert!(start + len <= m.cols());
        let mut value = Matrix::zeros(m.rows(), len);
        for r in 0..m.rows() {
            value.row_mut(r).copy_from_slice(&m.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols { input: a, start, len })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a);
        let n = (m.rows() * m.cols()) as f64;
        let value = Matrix::scalar(m.values().iter().sum::<f64>() / n);
        self.push(value, Op::MeanAll(a))
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let mut acc = 0.0;
        for &(id, w) in terms {
            acc += w * self.value(id).as_scalar();
        }
        self.push(Matrix::scalar(acc), Op::WeightedSum(terms.to_vec()))
    }

    /// Mean over rows of `logsumexp(row) - row[label]` (softmax cross-entropy
    /// with integer targets). Requires at least one row.
    pub fn cross_entropy_mean_rows(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.rows(), labels.len());
        assert!(!labels.is_empty(), "cross entropy over zero rows");
        let softmax = softmax_rows(z);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            assert!(label < z.cols(), "label out of range");
            let row = z.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + fmath::ln(row.iter().map(|&v| fmath::exp(v - max)).sum::<f64>());
            total += lse - row[label];
        }
        let value = Matrix::scalar(total / labels.len() as f64);
        self.push(value, Op::CrossEntropyMeanRows { logits, labels, softmax })
    }

    /// Affine map `x W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row_broadcast(xw, b)
    }

    /// Run backpropagation from a 1x1 `root` seeded with `seed`, returning
    /// per-node gradients for every `param` leaf (indexed by `NodeId`).
    pub fn backward(&self, root: NodeId, seed: f64) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(seed));

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut grads, *a, grad.matmul(&vb.transpose()));
                    accumulate(&mut grads, *b, va.transpose().matmul(&grad));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, grad.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, grad.scale(*s)),
                Op::AddRowBroadcast(a, row) => {
                    let mut row_grad = Matrix::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for c in 0..grad.cols() {
                            row_grad.add_at(0, c, grad.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, grad);
                    accumulate(&mut grads, *row, row_grad);
                }
                Op::MulRowBroadcast(a, row) => {
                    let (va, vrow) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
                    let mut a_grad = grad.clone();
                    for r in 0..a_grad.rows() {
                        for (v, &w) in a_grad.row_mut(r).iter_mut().zip(vrow.row(0)) {
                            *v *= w;
                        }
                    }
                    let mut row_grad = Matrix::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for c in 0..grad.cols() {
                            row_grad.add_at(0, c, grad.get(r, c) * va.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, a_grad);
                    accumulate(&mut grads, *row, row_grad);
                }
                Op::Relu(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut g = grad;
                    for (v, &x) in g.values_mut().iter_mut().zip(va.values()) {
                        if x <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot = Matrix::dot_rows(grad.row(r), y.row(r));
                        for c in 0..y.cols() {
                            g.set(r, c, y.get(r, c) * (grad.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::L2NormalizeRows { input, norms } => {
                    let y = &self.nodes[idx].value;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        if norms[r] == 0.0 {
                            g.row_mut(r).copy_from_slice(grad.row(r));
                            continue;
                        }
                        let dot = Matrix::dot_rows(grad.row(r), y.row(r));
                        for c in 0..y.cols() {
                            g.set(r, c, (grad.get(r, c) - y.get(r, c) * dot) / norms[r]);
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::NormalizeRows { input, inv_std } => {
                    let y = &self.nodes[idx].value;
                    let c = y.cols() as f64;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let mean_dy = grad.row(r).iter().sum::<f64>() / c;
                        let mean_dy_y = Matrix::dot_rows(grad.row(r), y.row(r)) / c;
                        for col in 0..y.cols() {
                            let v = inv_std[r]
                                * (grad.get(r, col) - mean_dy - y.get(r, col) * mean_dy_y);
                            g.set(r, col, v);
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::MaxPoolRows { input, argmax } => {
                    let va = &self.nodes[input.0].value;
                    let mut g = Matrix::zeros(va.rows(), va.cols());
                    for (c, &r) in argmax.iter().enumerate() {
                        g.add_at(r, c, grad.get(0, c));
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::SegmentMaxRows { input, offsets, argmax } => {
                    let va = &self.nodes[input.0].value;
                    let cols = va.cols();
                    let mut g = Matrix::zeros(va.rows(), va.cols());
                    for s in 0..offsets.len() - 1 {
                        for c in 0..cols {
                            g.add_at(argmax[s * cols + c], c, grad.get(s, c));
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::GatherRows { input, indices } => {
                    let va = &self.nodes[input.0].value;
                    let mut g = Matrix::zeros(va.rows(), va.cols());
                    for (out_r, &src_r) in indices.iter().enumerate() {
                        for c in 0..va.cols() {
                            g.add_at(src_r, c, grad.get(out_r, c));
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        let mut g = Matrix::zeros(rows, grad.cols());
                        for r in 0..rows {
                            g.row_mut(r).copy_from_slice(grad.row(at + r));
                        }
                        at += rows;
                        accumulate(&mut grads, p, g);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let cols = self.nodes[p.0].value.cols();
                        let mut g = Matrix::zeros(grad.rows(), cols);
                        for r in 0..grad.rows() {
                            g.row_mut(r).copy_from_slice(&grad.row(r)[at..at + cols]);
                        }
                        at += cols;
                        accumulate(&mut grads, p, g);
                    }
                }
                Op::SliceCols { input, start, len } => {
                    let va = &self.nodes[input.0].value;
                    let mut g = Matrix::zeros(va.rows(), va.cols());
                    for r in 0..grad.rows() {
                        for c in 0..*len {
                            g.set(r, start + c, grad.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::MeanAll(a) => {
                    let va = &self.nodes[a.0].value;
                    let s = grad.as_scalar() / (va.rows() * va.cols()) as f64;
                    let mut g = Matrix::zeros(va.rows(), va.cols());
                    for v in g.values_mut() {
                        *v = s;
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::WeightedSum(terms) => {
                    let s = grad.as_scalar();
                    for &(id, w) in terms {
                        accumulate(&mut grads, id, Matrix::scalar(s * w));
                    }
                }
                Op::CrossEntropyMeanRows { logits, labels, softmax } => {
                    let s = grad.as_scalar() / labels.len() as f64;
                    let mut g = softmax.scale(s);
                    for (r, &label) in labels.iter().enumerate() {
                        g.add_at(r, label, -s);
                    }
                    accumulate(&mut grads, *logits, g);
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for a node, if any flowed into it.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = fmath::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Column-wise max over rows `[lo, hi)`; ties keep the lowest row index.
fn column_max(m: &Matrix, lo: usize, hi: usize) -> (Matrix, Vec<usize>) {
    let mut value = Matrix::zeros(1, m.cols());
    let mut argmax = vec![lo; m.cols()];
    value.row_mut(0).copy_from_slice(m.row(lo));
    for r in lo + 1..hi {
        for c in 0..m.cols() {
            if m.get(r, c) > value.get(0, c) {
                value.set(0, c, m.get(r, c));
                argmax[c] = r;
            }
        }
    }
    (value, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference of `f` with respect to entry `i` of `x`.
    fn finite_diff(f: &dyn Fn(&Matrix) -> f64, x: &Matrix, i: usize, h: f64) -> f64 {
        let mut plus = x.clone();
        plus.values_mut()[i] += h;
        let mut minus = x.clone();
        minus.values_mut()[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Checks analytic gradients of `build` (a graph producing a scalar from
    /// one variable input) against central differences at every entry.
    fn check_gradient(build: &dyn Fn(&mut Graph, NodeId) -> NodeId, x: &Matrix, tol: f64) {
        let eval = |m: &Matrix| {
            let mut g = Graph::new();
            let input = g.param(m.clone());
            let out = build(&mut g, input);
            g.value(out).as_scalar()
        };
        let mut g = Graph::new();
        let input = g.param(x.clone());
        let out = build(&mut g, input);
        let grads = g.backward(out, 1.0);
        let analytic = grads.get(input).expect("gradient must reach input");
        for i in 0..x.values().len() {
            let fd = finite_diff(&eval, x, i, 1e-5);
            let ad = analytic.values()[i];
            let denom = ad.abs().max(fd.abs()).max(1e-6);
            assert!(
                (ad - fd).abs() / denom < tol,
                "entry {i}: analytic {ad} vs finite-diff {fd}"
            );
        }
    }

    #[test]
    fn matmul_affine_relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 4, 5);
        let b = random_matrix(&mut rng, 1, 5);
        check_gradient(
            &|g, input| {
                let w = g.constant(w.clone());
                let b = g.constant(b.clone());
                let h = g.affine(input, w, b);
                let r = g.relu(h);
                g.mean_all(r)
            },
            &x,
            1e-6,
        );
        // and with respect to the weight
        let x2 = x.clone();
        check_gradient(
            &|g, input| {
                let xc = g.constant(x2.clone());
                let m = g.matmul(xc, input);
                g.mean_all(m)
            },
            &w,
            1e-6,
        );
    }

    #[test]
    fn softmax_and_cross_entropy_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_matrix(&mut rng, 4, 6);
        check_gradient(
            &|g, input| {
                let s = g.softmax_rows(input);
                let t = g.transpose(s);
                g.mean_all(t)
            },
            &x,
            1e-5,
        );
        check_gradient(
            &|g, input| g.cross_entropy_mean_rows(input, vec![1, 0, 5, 2]),
            &x,
            1e-6,
        );
    }

    #[test]
    fn normalization_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_matrix(&mut rng, 3, 5);
        check_gradient(
            &|g, input| {
                let n = g.l2_normalize_rows(input);
                let w = g.constant(Matrix::from_vec(5, 1, vec![0.3, -0.2, 0.9, 0.1, 0.5]));
                let p = g.matmul(n, w);
                g.mean_all(p)
            },
            &x,
            1e-5,
        );
        check_gradient(
            &|g, input| {
                let n = g.normalize_rows(input, 1e-5);
                let gain = g.constant(Matrix::from_vec(1, 5, vec![1.1, 0.9, 1.3, 0.7, 1.0]));
                let scaled = g.mul_row_broadcast(n, gain);
                g.mean_all(scaled)
            },
            &x,
            1e-5,
        );
    }

    #[test]
    fn pooling_and_gather_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_matrix(&mut rng, 6, 4);
        check_gradient(
            &|g, input| {
                let p = g.max_pool_rows(input);
                g.mean_all(p)
            },
            &x,
            1e-6,
        );
        check_gradient(
            &|g, input| {
                let p = g.segment_max_rows(input, vec![0, 2, 6]);
                g.mean_all(p)
            },
            &x,
            1e-6,
        );
        check_gradient(
            &|g, input| {
                let p = g.gather_rows(input, vec![0, 2, 2, 5]);
                let r = g.relu(p);
                g.mean_all(r)
            },
            &x,
            1e-6,
        );
    }

    #[test]
    fn concat_slice_and_weighted_sum_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_matrix(&mut rng, 4, 6);
        check_gradient(
            &|g, input| {
                let left = g.slice_cols(input, 0, 3);
                let right = g.slice_cols(input, 3, 3);
                let swapped = g.concat_cols(&[right, left]);
                let stacked = g.concat_rows(&[swapped, input]);
                let a = g.mean_all(stacked);
                let b = g.mean_all(input);
                g.weighted_sum(&[(a, 2.0), (b, -0.5)])
            },
            &x,
            1e-6,
        );
    }

    #[test]
    fn fanout_accumulates_gradients() {
        // One input feeding two branches must receive the sum of both grads.
        let x = Matrix::from_vec(1, 2, vec![0.4, -0.7]);
        let mut g = Graph::new();
        let input = g.param(x.clone());
        let doubled = g.scale(input, 2.0);
        let sum = g.add(input, doubled);
        let out = g.mean_all(sum);
        let grads = g.backward(out, 1.0);
        let gi = grads.get(input).unwrap();
        // d/dx mean(x + 2x) = 3/2 per entry
        assert!((gi.get(0, 0) - 1.5).abs() < 1e-12);
        assert!((gi.get(0, 1) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constants_block_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Matrix::scalar(3.0));
        let p = g.param(Matrix::scalar(2.0));
        let s = g.add(c, p);
        let out = g.mean_all(s);
        let grads = g.backward(out, 1.0);
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_some());
    }
}
