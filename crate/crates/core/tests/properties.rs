//! Property tests over the algebraic invariants: IoU symmetry and bounds,
//! boundary-extension growth, contrastive permutation invariance, and
//! ranking scale invariance.

use pointground_core::geometry::{AxisAlignedBox3D, Rect, Vec3};
use pointground_core::inference::{filter_and_rank, inner_product_scores};
use pointground_core::losses::contrastive_loss;
use pointground_core::matrix::Matrix;
use pointground_core::projection::{apply_extension, iou_2d, iou_3d, ExtensionMode};
use proptest::prelude::*;

fn box3d_strategy() -> impl Strategy<Value = AxisAlignedBox3D> {
    (
        (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
        (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0),
    )
        .prop_map(|((x, y, z), (w, h, d))| {
            let min = Vec3::new(x, y, z);
            AxisAlignedBox3D::new(min, min.add(Vec3::new(w, h, d)))
        })
}

fn rect_strategy() -> impl Strategy<Value = Rect> {
    ((-100.0f64..700.0, -100.0f64..500.0), (0.0f64..300.0, 0.0f64..300.0))
        .prop_map(|((x, y), (w, h))| Rect::new(x, y, w, h))
}

proptest! {
    #[test]
    fn iou_3d_symmetric_bounded_and_one_on_self(a in box3d_strategy(), b in box3d_strategy()) {
        let ab = iou_3d(&a, &b);
        let ba = iou_3d(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.volume() > 1e-9 {
            prop_assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_2d_symmetric_and_bounded(a in rect_strategy(), b in rect_strategy()) {
        let ab = iou_2d(a, b);
        prop_assert!((ab - iou_2d(b, a)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.area() > 1e-9 {
            prop_assert!((iou_2d(a, a) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_extension_never_shrinks(rect in rect_strategy()) {
        // Growth holds before clamping; compare against the unclamped rect.
        let extended = Rect::new(rect.x, rect.y, rect.w + 0.2 * rect.w, rect.h + 0.2 * rect.h);
        prop_assert!(extended.w >= rect.w);
        prop_assert!(extended.h >= rect.h);
        // And clamping keeps the result inside the image.
        let clamped = apply_extension(rect, ExtensionMode::BoundaryExtended, 640.0, 480.0);
        prop_assert!(clamped.x >= 0.0 && clamped.y >= 0.0);
        prop_assert!(clamped.x + clamped.w <= 640.0 + 1e-9);
        prop_assert!(clamped.y + clamped.h <= 480.0 + 1e-9);
    }

    #[test]
    fn contrastive_invariant_under_paired_permutation(
        rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..6),
        other in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..6),
        shuffle_seed in 0u64..1000,
    ) {
        let m = rows.len().min(other.len());
        let f2d: Vec<&[f64]> = rows[..m].iter().map(Vec::as_slice).collect();
        let f3d: Vec<&[f64]> = other[..m].iter().map(Vec::as_slice).collect();
        let a = Matrix::from_rows(&f2d);
        let b = Matrix::from_rows(&f3d);

        let mut perm: Vec<usize> = (0..m).collect();
        let mut state = shuffle_seed.wrapping_add(1);
        for i in (1..m).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            perm.swap(i, j);
        }
        let pa = Matrix::from_rows(&perm.iter().map(|&i| a.row(i)).collect::<Vec<_>>());
        let pb = Matrix::from_rows(&perm.iter().map(|&i| b.row(i)).collect::<Vec<_>>());

        let original = contrastive_loss(&a, &b, 0.5, true);
        let permuted = contrastive_loss(&pa, &pb, 0.5, true);
        prop_assert!((original - permuted).abs() < 1e-9);
    }

    #[test]
    fn ranking_invariant_under_positive_query_scaling(
        emb in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 6), 1..7),
        query in proptest::collection::vec(-1.0f64..1.0, 6),
        scale in 0.01f64..100.0,
        normalize in proptest::bool::ANY,
    ) {
        let f3d = Matrix::from_rows(&emb.iter().map(Vec::as_slice).collect::<Vec<_>>());
        let f_q = Matrix::from_rows(&[query.as_slice()]);
        let cats: Vec<usize> = (0..emb.len()).map(|i| i % 3).collect();
        let a = inner_product_scores(&f3d, &f_q, normalize);
        let b = inner_product_scores(&f3d, &f_q.scale(scale), normalize);
        let (_, ranking_a, pred_a, _) = filter_and_rank(&cats, &[0, 1, 2], &a);
        let (_, ranking_b, pred_b, _) = filter_and_rank(&cats, &[0, 1, 2], &b);
        prop_assert_eq!(pred_a, pred_b);
        prop_assert_eq!(ranking_a, ranking_b);
    }
}
