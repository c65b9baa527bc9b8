//! Metric computation — box-overlap accuracy, candidate-selection accuracy,
//! top-n recall — and subset bucketing (Unique/Multiple, Easy/Hard,
//! view-dependent/independent).

use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::AxisAlignedBox3D;
use crate::inference::GroundingPrediction;
use crate::projection::iou_3d;
use crate::scene::{GroundingQuery, Scene};

/// Distractor threshold: queries with at most this many distractors are
/// "easy" (the source benchmark's convention).
pub const EASY_MAX_DISTRACTORS: u32 = 2;

/// One scored query: the prediction joined with its ground truth and subset
/// flags so metric aggregation needs nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub query_id: String,
    /// Box of the top-1 predicted proposal; `None` when prediction failed.
    pub predicted_box: Option<AxisAlignedBox3D>,
    /// Boxes of all proposals in the prediction's ranking order.
    pub ranked_boxes: Vec<AxisAlignedBox3D>,
    pub predicted_proposal_id: Option<u32>,
    pub target_proposal_id: Option<u32>,
    pub target_box: Option<AxisAlignedBox3D>,
    /// Scene has exactly one object of the query's target category.
    pub unique: Option<bool>,
    /// Query has at most [`EASY_MAX_DISTRACTORS`] distractors.
    pub easy: Option<bool>,
    pub view_dependent: Option<bool>,
}

/// Join a prediction with its scene and query into a scored outcome.
/// Reads `target_proposal_id` (evaluation is the audited legitimate reader).
pub fn outcome_for(
    scene: &Scene,
    query: &GroundingQuery,
    prediction: Option<&GroundingPrediction>,
) -> QueryOutcome {
    let target_proposal_id = query.target_proposal_id();
    let target_box = target_proposal_id
        .and_then(|id| scene.proposal_index(id))
        .map(|i| scene.proposals[i].box3d);
    let (predicted_box, ranked_boxes, predicted_proposal_id) = match prediction {
        Some(p) => (
            Some(scene.proposals[p.predicted_index].box3d),
            p.ranking.iter().map(|&i| scene.proposals[i].box3d).collect(),
            Some(p.predicted_proposal_id),
        ),
        None => (None, Vec::new(), None),
    };
    let same_category = scene
        .proposals
        .iter()
        .filter(|p| p.category_id == Some(query.target_category_id))
        .count();
    QueryOutcome {
        query_id: query.query_id.clone(),
        predicted_box,
        ranked_boxes,
        predicted_proposal_id,
        target_proposal_id,
        target_box,
        unique: Some(same_category == 1),
        easy: query.distractor_count.map(|d| d <= EASY_MAX_DISTRACTORS),
        view_dependent: query.view_dependent,
    }
}

/// Fraction of queries whose predicted box overlaps the ground truth with
/// IoU at least `m`. Missing predictions or ground truth count as incorrect.
pub fn acc_at_iou(outcomes: &[QueryOutcome], m: f64) -> f64 {
    fraction(outcomes, |o| match (&o.predicted_box, &o.target_box) {
        (Some(p), Some(t)) => iou_3d(p, t) >= m,
        _ => {
            log::warn!("query {}: missing prediction or ground-truth box; counted incorrect", o.query_id);
            false
        }
    })
}

/// Fraction of queries whose predicted proposal id equals the ground truth.
pub fn selection_accuracy(outcomes: &[QueryOutcome]) -> f64 {
    fraction(outcomes, |o| match (o.predicted_proposal_id, o.target_proposal_id) {
        (Some(p), Some(t)) => p == t,
        _ => {
            log::warn!("query {}: missing prediction or target id; counted incorrect", o.query_id);
            false
        }
    })
}

/// Fraction of queries where at least one of the top-n ranked boxes exceeds
/// IoU `m` (strictly) with the ground truth.
pub fn recall_at_n_iou(outcomes: &[QueryOutcome], n: usize, m: f64) -> f64 {
    fraction(outcomes, |o| match &o.target_box {
        Some(t) => o.ranked_boxes.iter().take(n).any(|b| iou_3d(b, t) > m),
        None => {
            log::warn!("query {}: missing ground-truth box; counted incorrect", o.query_id);
            false
        }
    })
}

fn fraction(outcomes: &[QueryOutcome], hit: impl Fn(&QueryOutcome) -> bool) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| hit(o)).count() as f64 / outcomes.len() as f64
}

/// A metric value over one query subset.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetValue {
    pub name: &'static str,
    pub value: f64,
    pub count: usize,
}

/// A metric with its overall value and per-subset breakdown. Subsets come in
/// complementary pairs partitioning the queries that carry the relevant
/// metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricBreakdown {
    pub overall: f64,
    pub count: usize,
    pub subsets: Vec<SubsetValue>,
}

/// Metric parameters: overlap thresholds and the recall depth.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_n: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { iou_thresholds: alloc::vec![0.25, 0.5], recall_n: 3 }
    }
}

/// Full evaluation report over a prediction set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub total_queries: usize,
    pub acc_at_iou: Vec<(f64, MetricBreakdown)>,
    pub selection: MetricBreakdown,
    pub recall_at_n_iou: Vec<(usize, f64, MetricBreakdown)>,
}

const PARTITIONS: [(&str, &str); 3] =
    [("unique", "multiple"), ("easy", "hard"), ("view_dep", "view_indep")];

fn subset_flag(outcome: &QueryOutcome, name: &str) -> Option<bool> {
    match name {
        "unique" => outcome.unique,
        "multiple" => outcome.unique.map(|u| !u),
        "easy" => outcome.easy,
        "hard" => outcome.easy.map(|e| !e),
        "view_dep" => outcome.view_dependent,
        "view_indep" => outcome.view_dependent.map(|v| !v),
        _ => unreachable!("unknown subset"),
    }
}

fn breakdown(outcomes: &[QueryOutcome], metric: impl Fn(&[QueryOutcome]) -> f64) -> MetricBreakdown {
    let mut subsets = Vec::new();
    for (a, b) in PARTITIONS {
        for name in [a, b] {
            let members: Vec<QueryOutcome> = outcomes
                .iter()
                .filter(|o| subset_flag(o, name) == Some(true))
                .cloned()
                .collect();
            let excluded = outcomes.iter().filter(|o| subset_flag(o, name).is_none()).count();
            if excluded > 0 && name == a {
                log::warn!("{excluded} queries lack metadata for the {a}/{b} split; excluded");
            }
            subsets.push(SubsetValue { name, value: metric(&members), count: members.len() });
        }
    }
    MetricBreakdown { overall: metric(outcomes), count: outcomes.len(), subsets }
}

/// Compute every metric with its subset breakdown.
pub fn build_report(outcomes: &[QueryOutcome], params: &MetricParams) -> EvalReport {
    EvalReport {
        total_queries: outcomes.len(),
        acc_at_iou: params
            .iou_thresholds
            .iter()
            .map(|&m| (m, breakdown(outcomes, |s| acc_at_iou(s, m))))
            .collect(),
        selection: breakdown(outcomes, selection_accuracy),
        recall_at_n_iou: params
            .iou_thresholds
            .iter()
            .map(|&m| (params.recall_n, m, breakdown(outcomes, |s| recall_at_n_iou(s, params.recall_n, m))))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn unit_box(offset: f64) -> AxisAlignedBox3D {
        AxisAlignedBox3D::new(
            Vec3::new(offset, 0.0, 0.0),
            Vec3::new(offset + 1.0, 1.0, 1.0),
        )
    }

    fn outcome(
        predicted: AxisAlignedBox3D,
        target: AxisAlignedBox3D,
        ranked: Vec<AxisAlignedBox3D>,
        ids: (u32, u32),
    ) -> QueryOutcome {
        QueryOutcome {
            query_id: "q".into(),
            predicted_box: Some(predicted),
            ranked_boxes: ranked,
            predicted_proposal_id: Some(ids.0),
            target_proposal_id: Some(ids.1),
            target_box: Some(target),
            unique: Some(true),
            easy: Some(true),
            view_dependent: Some(false),
        }
    }

    #[test]
    fn exact_box_counts_at_both_thresholds() {
        let o = outcome(unit_box(0.0), unit_box(0.0), alloc::vec![unit_box(0.0)], (0, 0));
        let outcomes = [o];
        assert_eq!(acc_at_iou(&outcomes, 0.25), 1.0);
        assert_eq!(acc_at_iou(&outcomes, 0.5), 1.0);
    }

    #[test]
    fn one_third_iou_passes_quarter_but_not_half() {
        // Unit cube shifted +0.5 in x: IoU = 1/3.
        let o = outcome(unit_box(0.5), unit_box(0.0), alloc::vec![unit_box(0.5)], (0, 0));
        let outcomes = [o];
        assert_eq!(acc_at_iou(&outcomes, 0.25), 1.0);
        assert_eq!(acc_at_iou(&outcomes, 0.5), 0.0);
    }

    #[test]
    fn disjoint_predictions_score_zero() {
        let o = outcome(unit_box(5.0), unit_box(0.0), alloc::vec![unit_box(5.0)], (0, 0));
        assert_eq!(acc_at_iou(&[o], 0.25), 0.0);
    }

    #[test]
    fn missing_prediction_counts_incorrect() {
        let mut o = outcome(unit_box(0.0), unit_box(0.0), alloc::vec![], (0, 0));
        o.predicted_box = None;
        o.predicted_proposal_id = None;
        let outcomes = [o];
        assert_eq!(acc_at_iou(&outcomes, 0.25), 0.0);
        assert_eq!(selection_accuracy(&outcomes), 0.0);
    }

    #[test]
    fn selection_accuracy_counts_matches() {
        let hit = outcome(unit_box(0.0), unit_box(0.0), alloc::vec![], (3, 3));
        let miss = outcome(unit_box(0.0), unit_box(0.0), alloc::vec![], (3, 4));
        assert_eq!(selection_accuracy(std::slice::from_ref(&hit)), 1.0);
        assert_eq!(selection_accuracy(&[hit.clone(), hit, miss.clone(), miss]), 0.5);
    }

    #[test]
    fn recall_counts_hits_within_top_n() {
        // Correct box ranked third: hit at n = 3, miss at n = 2.
        let o = outcome(
            unit_box(5.0),
            unit_box(0.0),
            alloc::vec![unit_box(5.0), unit_box(7.0), unit_box(0.0)],
            (0, 2),
        );
        let outcomes = [o];
        assert_eq!(recall_at_n_iou(&outcomes, 3, 0.25), 1.0);
        assert_eq!(recall_at_n_iou(&outcomes, 2, 0.25), 0.0);
    }

    #[test]
    fn recall_at_one_is_strict_accuracy() {
        // IoU exactly m: acc (>=) counts it, recall (>) does not.
        let o = outcome(unit_box(0.5), unit_box(0.0), alloc::vec![unit_box(0.5)], (0, 0));
        let outcomes = [o];
        let m = 1.0 / 3.0;
        assert_eq!(acc_at_iou(&outcomes, m), 1.0);
        assert_eq!(recall_at_n_iou(&outcomes, 1, m), 0.0, "recall is strict");
        assert_eq!(recall_at_n_iou(&outcomes, 1, m - 1e-9), 1.0);
    }

    #[test]
    fn recall_monotonicity() {
        let outcomes: Vec<QueryOutcome> = (0..6)
            .map(|i| {
                outcome(
                    unit_box(i as f64 * 0.3),
                    unit_box(0.0),
                    (0..4).map(|j| unit_box((i + j) as f64 * 0.25)).collect(),
                    (0, 0),
                )
            })
            .collect();
        for m in [0.1, 0.25, 0.5] {
            for n in 1..4 {
                assert!(
                    recall_at_n_iou(&outcomes, n, m) <= recall_at_n_iou(&outcomes, n + 1, m),
                    "recall must not decrease in n"
                );
            }
        }
        for n in [1, 3] {
            assert!(recall_at_n_iou(&outcomes, n, 0.5) <= recall_at_n_iou(&outcomes, n, 0.25));
        }
        assert!(acc_at_iou(&outcomes, 0.5) <= acc_at_iou(&outcomes, 0.25));
    }

    #[test]
    fn bucketing_from_synthetic_scene() {
        let scene = crate::scene::generate_synthetic_scene(3, 4, 8, 1);
        for q in &scene.queries {
            let o = outcome_for(&scene, q, None);
            // Synthetic scenes use distinct categories, zero distractors.
            assert_eq!(o.unique, Some(true));
            assert_eq!(o.easy, Some(true));
            assert_eq!(o.view_dependent, Some(false));
        }
    }

    #[test]
    fn easy_threshold_is_two_distractors() {
        let scene = crate::scene::generate_synthetic_scene(3, 2, 4, 1);
        let mut q = scene.queries[0].clone();
        q.distractor_count = Some(1);
        assert_eq!(outcome_for(&scene, &q, None).easy, Some(true));
        q.distractor_count = Some(2);
        assert_eq!(outcome_for(&scene, &q, None).easy, Some(true));
        q.distractor_count = Some(3);
        assert_eq!(outcome_for(&scene, &q, None).easy, Some(false));
        q.distractor_count = None;
        assert_eq!(outcome_for(&scene, &q, None).easy, None);
    }

    #[test]
    fn report_overall_is_count_weighted_mean_of_subsets() {
        let mut outcomes = Vec::new();
        for i in 0..10 {
            let mut o = outcome(
                unit_box(if i % 3 == 0 { 0.0 } else { 5.0 }),
                unit_box(0.0),
                alloc::vec![unit_box(0.0)],
                (i as u32, if i % 2 == 0 { i as u32 } else { 99 }),
            );
            o.unique = Some(i % 2 == 0);
            o.easy = Some(i < 7);
            o.view_dependent = Some(i % 4 == 0);
            outcomes.push(o);
        }
        let report = build_report(&outcomes, &MetricParams::default());
        for (_, b) in &report.acc_at_iou {
            check_weighted(b);
        }
        check_weighted(&report.selection);
        for (_, _, b) in &report.recall_at_n_iou {
            check_weighted(b);
        }
    }

    fn check_weighted(b: &MetricBreakdown) {
        for pair in b.subsets.chunks(2) {
            let total_count: usize = pair.iter().map(|s| s.count).sum();
            assert_eq!(total_count, b.count, "subset counts must sum to the total");
            let weighted: f64 =
                pair.iter().map(|s| s.value * s.count as f64).sum::<f64>() / b.count as f64;
            assert!(
                (weighted - b.overall).abs() < 1e-12,
                "overall {} must equal count-weighted subset mean {}",
                b.overall,
                weighted
            );
        }
    }
}
