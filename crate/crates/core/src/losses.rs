//! Symmetric cross-modal contrastive losses, softmax classification losses,
//! and the weighted overall objective.
//!
//! The contrastive term treats the scene's M paired (2D region, 3D proposal)
//! embeddings as the batch: similarities S[i][j] = f2d_i · f3d_j / tau, and
//! the loss averages, over i, the row-wise and column-wise cross-entropy of
//! the matched diagonal. The adapted-embedding contrastive term reuses the
//! same function on (A2D, A3D).

use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId};
use crate::matrix::Matrix;

/// Loss term weights and the contrastive temperature. Neither is pinned by
/// the training recipe; the defaults are 1.0 for every weight and 0.07 for
/// the temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0, lambda4: 1.0, tau: 0.07 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau > 0.0) {
            return Err(LossError::InvalidTemperature { tau: self.tau });
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v >= 0.0) {
                return Err(LossError::NegativeWeight { term: name, value: v });
            }
        }
        Ok(())
    }
}

/// Per-step loss components plus their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l_e: f64,
    pub l_a: f64,
    pub l_cls_2d: f64,
    pub l_cls_3d: f64,
    pub l_cls_q: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("loss component {term} is not finite ({value})")]
    NonFiniteComponent { term: &'static str, value: f64 },
    #[error("temperature must be positive, got {tau}")]
    InvalidTemperature { tau: f64 },
    #[error("loss weight {term} must be non-negative, got {value}")]
    NegativeWeight { term: &'static str, value: f64 },
}

/// Graph form of the symmetric contrastive loss over M aligned pairs
/// (row i of `f2d` pairs with row i of `f3d`). Requires M >= 1; the M = 0
/// case is handled by the plain wrapper.
pub fn contrastive_loss_node(
    g: &mut Graph,
    f2d: NodeId,
    f3d: NodeId,
    tau: f64,
    normalize: bool,
) -> NodeId {
    let m = g.value(f2d).rows();
    assert_eq!(m, g.value(f3d).rows(), "pairing requires equal M");
    assert!(m >= 1, "use the wrapper for the empty case");
    assert!(tau > 0.0, "temperature must be positive");
    let (a, b) = if normalize {
        (g.l2_normalize_rows(f2d), g.l2_normalize_rows(f3d))
    } else {
        (f2d, f3d)
    };
    let bt = g.transpose(b);
    let sims = g.matmul(a, bt);
    let scaled = g.scale(sims, 1.0 / tau);
    let labels: Vec<usize> = (0..m).collect();
    // Row-wise: for each region i, softmax over proposals j.
    let rows = g.cross_entropy_mean_rows(scaled, labels.clone());
    // Column-wise: for each proposal i, softmax over regions j.
    let transposed = g.transpose(scaled);
    let cols = g.cross_entropy_mean_rows(transposed, labels);
    g.add(rows, cols)
}

/// Symmetric contrastive loss over plain matrices. M = 0 is defined as 0
/// (no pairs this scene) with a warning.
pub fn contrastive_loss(f2d: &Matrix, f3d: &Matrix, tau: f64, normalize: bool) -> f64 {
    assert_eq!(f2d.rows(), f3d.rows(), "pairing requires equal M");
    if f2d.rows() == 0 {
        log::warn!("contrastive loss over zero pairs; defined as 0");
        return 0.0;
    }
    let mut g = Graph::new();
    let a = g.constant(f2d.clone());
    let b = g.constant(f3d.clone());
    let loss = contrastive_loss_node(&mut g, a, b, tau, normalize);
    g.value(loss).as_scalar()
}

/// Graph form of the mean softmax cross-entropy; labels must be non-empty.
pub fn classification_loss_node(g: &mut Graph, logits: NodeId, labels: Vec<usize>) -> NodeId {
    g.cross_entropy_mean_rows(logits, labels)
}

/// Mean softmax cross-entropy over plain logits. Empty label sets (all rows
/// excluded upstream) are defined as 0 with a warning.
pub fn classification_loss(logits: &Matrix, labels: &[usize]) -> f64 {
    assert_eq!(logits.rows(), labels.len(), "one label per logit row");
    if labels.is_empty() {
        log::warn!("classification loss over zero rows; defined as 0");
        return 0.0;
    }
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let loss = classification_loss_node(&mut g, z, labels.to_vec());
    g.value(loss).as_scalar()
}

/// Weighted overall objective:
/// `total = lambda1*(L_e + L_a) + lambda2*L_cls_2d + lambda3*L_cls_3d + lambda4*L_cls_q`.
/// Fails fast naming the first non-finite component.
pub fn total_loss(
    l_e: f64,
    l_a: f64,
    l_cls_2d: f64,
    l_cls_3d: f64,
    l_cls_q: f64,
    w: &LossWeights,
) -> Result<f64, LossError> {
    for (term, value) in [
        ("L_e", l_e),
        ("L_a", l_a),
        ("L_cls_2d", l_cls_2d),
        ("L_cls_3d", l_cls_3d),
        ("L_cls_q", l_cls_q),
    ] {
        if !value.is_finite() {
            return Err(LossError::NonFiniteComponent { term, value });
        }
    }
    Ok(w.lambda1 * (l_e + l_a) + w.lambda2 * l_cls_2d + w.lambda3 * l_cls_3d + w.lambda4 * l_cls_q)
}

/// Assemble a [`LossReport`] from components, validating finiteness.
pub fn loss_report(
    l_e: f64,
    l_a: f64,
    l_cls_2d: f64,
    l_cls_3d: f64,
    l_cls_q: f64,
    w: &LossWeights,
) -> Result<LossReport, LossError> {
    let total = total_loss(l_e, l_a, l_cls_2d, l_cls_3d, l_cls_q, w)?;
    Ok(LossReport { l_e, l_a, l_cls_2d, l_cls_3d, l_cls_q, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar evaluation of the paired contrastive objective:
    /// a direct transcription with explicit loops, kept free of the graph
    /// machinery on purpose.
    pub(crate) fn contrastive_oracle(f2d: &Matrix, f3d: &Matrix, tau: f64, normalize: bool) -> f64 {
        let m = f2d.rows();
        let d = f2d.cols();
        let norm_row = |m: &Matrix, r: usize| -> vec::Vec<f64> {
            let mut row = m.row(r).to_vec();
            if normalize {
                let n = fmath::sqrt(row.iter().map(|v| v * v).sum::<f64>());
                if n > 0.0 {
                    for v in &mut row {
                        *v /= n;
                    }
                }
            }
            row
        };
        let dot = |a: &[f64], b: &[f64]| -> f64 { (0..d).map(|i| a[i] * b[i]).sum() };
        let mut total = 0.0;
        for i in 0..m {
            let fi2 = norm_row(f2d, i);
            let fi3 = norm_row(f3d, i);
            let pos = fmath::exp(dot(&fi2, &fi3) / tau);
            let mut denom_rows = 0.0;
            for j in 0..m {
                denom_rows += fmath::exp(dot(&fi2, &norm_row(f3d, j)) / tau);
            }
            let mut denom_cols = 0.0;
            for j in 0..m {
                denom_cols += fmath::exp(dot(&norm_row(f2d, j), &fi3) / tau);
            }
            total += fmath::ln(pos / denom_rows) + fmath::ln(pos / denom_cols);
        }
        -total / m as f64
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        let f = Matrix::from_rows(&[&[0.3, -0.8, 0.5]]);
        assert_eq!(contrastive_loss(&f, &f, 0.07, true), 0.0);
        let g = Matrix::from_rows(&[&[2.0, 1.0, 0.0]]);
        assert_eq!(contrastive_loss(&f, &g, 1.0, false), 0.0);
    }

    #[test]
    fn zero_pairs_is_zero_with_warning() {
        let empty = Matrix::zeros(0, 4);
        assert_eq!(contrastive_loss(&empty, &empty, 1.0, true), 0.0);
    }

    #[test]
    fn matched_unit_rows_hand_value() {
        // M = 2, tau = 1, rows e1 and e2 on both sides: 2 ln(1 + e^-1).
        let f = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let loss = contrastive_loss(&f, &f, 1.0, false);
        let expect = 2.0 * fmath::ln(1.0 + fmath::exp(-1.0));
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
        assert!((loss - 0.6266).abs() < 1e-4);
    }

    #[test]
    fn mismatched_unit_rows_hand_value() {
        // Swapped pairing: 2 ln(1 + e), strictly larger than matched.
        let f2d = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let f3d = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let loss = contrastive_loss(&f2d, &f3d, 1.0, false);
        let expect = 2.0 * fmath::ln(1.0 + fmath::exp(1.0));
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 2.6266).abs() < 1e-4);
        assert!(loss > contrastive_loss(&f2d, &f2d, 1.0, false));
    }

    #[test]
    fn implementation_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..300 {
            let m = rng.random_range(1..=6);
            let d = rng.random_range(2..=8);
            let tau = [0.07, 0.5, 1.0][trial % 3];
            let normalize = trial % 2 == 0;
            let f2d = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let f3d = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let got = contrastive_loss(&f2d, &f3d, tau, normalize);
            let want = contrastive_oracle(&f2d, &f3d, tau, normalize);
            assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
            assert!(got >= -1e-12, "loss must be non-negative, got {got}");
        }
    }

    #[test]
    fn invariant_under_simultaneous_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let m = rng.random_range(2..=5);
            let d = 4;
            let f2d = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let f3d = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let mut perm: vec::Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let rows2: vec::Vec<&[f64]> = perm.iter().map(|&i| f2d.row(i)).collect();
            let rows3: vec::Vec<&[f64]> = perm.iter().map(|&i| f3d.row(i)).collect();
            let p2 = Matrix::from_rows(&rows2);
            let p3 = Matrix::from_rows(&rows3);
            let a = contrastive_loss(&f2d, &f3d, 0.5, true);
            let b = contrastive_loss(&p2, &p3, 0.5, true);
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matched_beats_derangements_for_separated_rows() {
        // For well-separated unit embeddings the aligned pairing is optimal.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let m = rng.random_range(2..=6);
            let d = 8;
            // Distinct basis rows plus small noise keep rows well separated.
            let mut data = vec![0.0f64; m * d];
            for i in 0..m {
                data[i * d + i] = 1.0;
                for j in 0..d {
                    data[i * d + j] += rng.random_range(-0.05..0.05);
                }
            }
            let f = Matrix::from_vec(m, d, data);
            let matched = contrastive_loss(&f, &f, 0.5, true);
            // Rotate rows by one: a derangement for every m >= 2.
            let rows: vec::Vec<&[f64]> = (0..m).map(|i| f.row((i + 1) % m)).collect();
            let deranged = Matrix::from_rows(&rows);
            let mismatched = contrastive_loss(&f, &deranged, 0.5, true);
            assert!(matched <= mismatched, "matched {matched} > deranged {mismatched}");
        }
    }

    #[test]
    fn loss_decreases_as_temperature_sharpens_at_matched_optimum() {
        let f = Matrix::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let taus = [1.0, 0.5, 0.07];
        let losses: vec::Vec<f64> =
            taus.iter().map(|&t| contrastive_loss(&f, &f, t, false)).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss must decrease as tau shrinks: {losses:?}");
        }
        for l in losses {
            assert!(l.is_finite());
        }
    }

    #[test]
    fn classification_hand_values() {
        // Uniform logits over K = 4: ln 4.
        let logits = Matrix::from_rows(&[&[0.0, 0.0, 0.0, 0.0]]);
        let loss = classification_loss(&logits, &[2]);
        assert!((loss - fmath::ln(4.0)).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);

        // (10, 0) with label 0: ln(1 + e^-10).
        let logits = Matrix::from_rows(&[&[10.0, 0.0]]);
        let loss = classification_loss(&logits, &[0]);
        assert!((loss - fmath::ln(1.0 + fmath::exp(-10.0))).abs() < 1e-12);
        assert!((loss - 4.54e-5).abs() < 1e-6);

        // One-hot-correct limit drives the loss to zero.
        let logits = Matrix::from_rows(&[&[100.0, 0.0]]);
        assert!(classification_loss(&logits, &[0]) < 1e-12);
    }

    #[test]
    fn classification_empty_is_zero() {
        assert_eq!(classification_loss(&Matrix::zeros(0, 3), &[]), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights { tau: 1.0, ..Default::default() };
        let total = total_loss(0.5, 0.5, 0.2, 0.3, 0.1, &w).unwrap();
        assert!((total - 1.6).abs() < 1e-12);

        let off_contrastive = LossWeights { lambda1: 0.0, tau: 1.0, ..Default::default() };
        let total = total_loss(9.0, 9.0, 0.2, 0.3, 0.1, &off_contrastive).unwrap();
        assert!((total - 0.6).abs() < 1e-12);

        let zeroed = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0, tau: 1.0 };
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, 5.0, &zeroed).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_names_the_nan_component() {
        let w = LossWeights::default();
        let err = total_loss(0.1, f64::NAN, 0.0, 0.0, 0.0, &w).unwrap_err();
        assert!(matches!(err, LossError::NonFiniteComponent { term: "L_a", .. }));
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let m = 3;
        let d = 5;
        let f2d = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let f3d = Matrix::from_vec(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect());
        for normalize in [false, true] {
            let mut g = Graph::new();
            let a = g.constant(f2d.clone());
            let b = g.param(f3d.clone());
            let loss = contrastive_loss_node(&mut g, a, b, 0.5, normalize);
            let grads = g.backward(loss, 1.0);
            let analytic = grads.get(b).unwrap();
            for i in 0..m * d {
                let h = 1e-5;
                let mut plus = f3d.clone();
                plus.values_mut()[i] += h;
                let mut minus = f3d.clone();
                minus.values_mut()[i] -= h;
                let fd = (contrastive_loss(&f2d, &plus, 0.5, normalize)
                    - contrastive_loss(&f2d, &minus, 0.5, normalize))
                    / (2.0 * h);
                let ad = analytic.values()[i];
                let denom = ad.abs().max(fd.abs()).max(1e-6);
                assert!((ad - fd).abs() / denom < 1e-5, "entry {i}: {ad} vs {fd}");
            }
        }
    }
}
