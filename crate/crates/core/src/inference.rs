//! 2D-free grounding at test time.
//!
//! Proposals are classified by inner product of their residual embeddings
//! against the adapted category embeddings; the query's classifier picks its
//! top-k categories; proposals outside those categories are masked out (all
//! kept when nothing matches); the reserved proposals are ranked by the
//! inner product of F3D with the query embedding and the top-1 wins.

use alloc::string::String;
use alloc::vec::Vec;

use crate::adaptation::{classify_against_categories, ClassificationLogits, LogitsSource};
use crate::autodiff::Graph;
use crate::encoders::{EncoderError, Modality, TextEncoder};
use crate::matrix::Matrix;
use crate::model::{Checkpoint, GroundingModel};
use crate::params::GraphBinder;
use crate::scene::{CategoryVocabulary, GroundingQuery, Scene};

/// Grounding result for one query. `mask` and `ranking` are positional over
/// the scene's proposal list; `scores` carries negative infinity for
/// filtered rows so downstream ranking metrics only order reserved rows by
/// value.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingPrediction {
    pub query_id: String,
    pub mask: Vec<bool>,
    pub scores: Vec<f64>,
    pub predicted_index: usize,
    pub predicted_proposal_id: u32,
    pub topk_categories: Vec<usize>,
    /// All proposals, best first: reserved rows by score, then filtered rows
    /// by score.
    pub ranking: Vec<usize>,
    /// True when no proposal matched the query's top-k categories and the
    /// filter kept everything.
    pub fallback: bool,
}

/// Per-query grounding results for one scene, keyed by query id.
pub type SceneGroundings = Vec<(String, Result<GroundingPrediction, InferenceError>)>;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error("scene {scene_id} has no proposals to ground")]
    NoProposals { scene_id: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Everything fixed across queries at inference time: the trained model, the
/// frozen text provider, the vocabulary and top-k. Similarity follows the
/// model's normalization switch so inference ranks embeddings exactly the
/// way training compared them.
pub struct Grounder<'a> {
    pub model: &'a GroundingModel,
    pub text: &'a dyn TextEncoder,
    pub vocab: &'a CategoryVocabulary,
    pub k: usize,
}

/// Per-scene reusable state: proposal embeddings and category predictions.
pub struct SceneEmbeddings {
    pub f3d: Matrix,
    pub proposal_categories: Vec<usize>,
}

impl<'a> Grounder<'a> {
    pub fn new(
        model: &'a GroundingModel,
        text: &'a dyn TextEncoder,
        vocab: &'a CategoryVocabulary,
        k: usize,
    ) -> Result<Self, InferenceError> {
        if k == 0 {
            return Err(InferenceError::InvalidK);
        }
        Ok(Self { model, text, vocab, k })
    }

    /// Forward the 3D module once for a scene: F3D plus per-proposal
    /// category predictions from the residual embeddings.
    pub fn scene_embeddings(&self, scene: &Scene) -> Result<SceneEmbeddings, InferenceError> {
        if scene.proposals.is_empty() {
            return Err(InferenceError::NoProposals { scene_id: scene.scene_id.clone() });
        }
        let mut g = Graph::new();
        let mut binder = GraphBinder::new(&self.model.params);
        let nodes = self.model.forward_proposals(&mut g, &mut binder, scene, &scene.proposals);
        let labels: Vec<&str> = self.vocab.labels().iter().map(String::as_str).collect();
        let f_c = self.text.encode_text(&labels, Modality::TextCategory)?.vectors;
        let cats = self.model.forward_categories(&mut g, &mut binder, &f_c);
        let r3d = g.value(nodes.r3d).clone();
        let r_c = g.value(cats.r).clone();
        let i3d = classify_against_categories(&r3d, &r_c, LogitsSource::Proposal3D);
        Ok(SceneEmbeddings {
            f3d: g.value(nodes.f3d).clone(),
            proposal_categories: i3d.argmax_rows(),
        })
    }

    /// Ground one query against precomputed scene embeddings.
    pub fn ground_with(
        &self,
        query: &GroundingQuery,
        scene: &Scene,
        emb: &SceneEmbeddings,
    ) -> Result<GroundingPrediction, InferenceError> {
        let mut g = Graph::new();
        let mut binder = GraphBinder::new(&self.model.params);
        let f_q = self.text.encode_text(&[query.text.as_str()], Modality::TextQuery)?.vectors;
        let queries = self.model.forward_queries(&mut g, &mut binder, &f_q);
        let i_q = ClassificationLogits::new(LogitsSource::Query, g.value(queries.i_q).clone());
        let topk = i_q.topk_row(0, self.k);

        let scores = inner_product_scores(&emb.f3d, &f_q, self.model.config().normalize);
        let (mask, ranking, predicted_index, fallback) =
            filter_and_rank(&emb.proposal_categories, &topk, &scores);
        let reported: Vec<f64> = scores
            .iter()
            .zip(&mask)
            .map(|(&s, &kept)| if kept { s } else { f64::NEG_INFINITY })
            .collect();
        Ok(GroundingPrediction {
            query_id: query.query_id.clone(),
            mask,
            scores: reported,
            predicted_index,
            predicted_proposal_id: scene.proposals[predicted_index].proposal_id,
            topk_categories: topk,
            ranking,
            fallback,
        })
    }

    /// Ground one query (the scene forward is recomputed; batch with
    /// [`Grounder::scene_embeddings`] + [`Grounder::ground_with`] when
    /// grounding many queries in one scene).
    pub fn ground(
        &self,
        query: &GroundingQuery,
        scene: &Scene,
    ) -> Result<GroundingPrediction, InferenceError> {
        let emb = self.scene_embeddings(scene)?;
        self.ground_with(query, scene, &emb)
    }

    /// Ground every query of a scene. Per-query failures are reported
    /// individually; the run continues.
    pub fn ground_scene(&self, scene: &Scene) -> Result<SceneGroundings, InferenceError> {
        let emb = self.scene_embeddings(scene)?;
        Ok(scene
            .queries
            .iter()
            .map(|q| (q.query_id.clone(), self.ground_with(q, scene, &emb)))
            .collect())
    }
}

/// Build a grounder directly from a checkpoint.
pub fn model_from_checkpoint(checkpoint: &Checkpoint) -> Result<GroundingModel, InferenceError> {
    Ok(GroundingModel::from_checkpoint(checkpoint)?)
}

/// Inner products of each proposal embedding with the query embedding
/// (1 x d), optionally on L2-normalized rows.
pub fn inner_product_scores(f3d: &Matrix, f_q: &Matrix, normalize: bool) -> Vec<f64> {
    assert_eq!(f_q.rows(), 1, "one query at a time");
    assert_eq!(f3d.cols(), f_q.cols(), "embedding width mismatch");
    let (a, b);
    let (f3d, f_q) = if normalize {
        a = f3d.l2_normalize_rows();
        b = f_q.l2_normalize_rows();
        (&a, &b)
    } else {
        (f3d, f_q)
    };
    (0..f3d.rows()).map(|r| Matrix::dot_rows(f3d.row(r), f_q.row(0))).collect()
}

/// The category-oriented filtering rule, separated from the embedding
/// plumbing so it can be checked against a brute-force oracle.
///
/// Returns (mask, ranking, predicted index, fallback): proposals whose
/// predicted category is within the query's top-k are reserved; when none
/// match, everything is kept. The ranking lists reserved rows by descending
/// score (ties to the lower index), then filtered rows likewise; the
/// prediction is the ranking's head.
pub fn filter_and_rank(
    proposal_categories: &[usize],
    query_topk: &[usize],
    scores: &[f64],
) -> (Vec<bool>, Vec<usize>, usize, bool) {
    assert_eq!(proposal_categories.len(), scores.len());
    assert!(!scores.is_empty(), "caller guarantees at least one proposal");
    let mut mask: Vec<bool> =
        proposal_categories.iter().map(|c| query_topk.contains(c)).collect();
    let fallback = mask.iter().all(|&m| !m);
    if fallback {
        mask.iter_mut().for_each(|m| *m = true);
    }
    let mut reserved: Vec<usize> = (0..scores.len()).filter(|&i| mask[i]).collect();
    let mut filtered: Vec<usize> = (0..scores.len()).filter(|&i| !mask[i]).collect();
    let by_score_desc =
        |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    reserved.sort_by(by_score_desc);
    filtered.sort_by(by_score_desc);
    let predicted = reserved[0];
    let mut ranking = reserved;
    ranking.extend(filtered);
    (mask, ranking, predicted, fallback)
}
