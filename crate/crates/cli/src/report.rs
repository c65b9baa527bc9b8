//! Prediction and evaluation report serialization, plus the aligned text
//! table for eval output.

use std::path::Path;

use pointground_core::evaluation::{EvalReport, MetricBreakdown};
use pointground_core::geometry::AxisAlignedBox3D;
use pointground_core::inference::GroundingPrediction;
use pointground_core::scene::Scene;
use serde::{Deserialize, Serialize};

use crate::Provenance;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl ReportError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.display().to_string(), message: message.into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Box3DRecord {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<&AxisAlignedBox3D> for Box3DRecord {
    fn from(b: &AxisAlignedBox3D) -> Self {
        Self { min: [b.min.x, b.min.y, b.min.z], max: [b.max.x, b.max.y, b.max.z] }
    }
}

/// One grounded query. `scores` uses `null` for filtered proposals (the
/// in-memory sentinel is negative infinity, which JSON cannot carry);
/// `ranking` lists proposal ids best-first.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub scene_id: String,
    pub predicted_proposal_id: u32,
    pub box3d: Box3DRecord,
    pub mask: Vec<bool>,
    pub scores: Vec<Option<f64>>,
    pub topk_categories: Vec<usize>,
    pub ranking: Vec<u32>,
    pub fallback: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionErrorRecord {
    pub query_id: String,
    pub scene_id: String,
    pub error: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionFile {
    pub provenance: Provenance,
    pub topk: usize,
    pub predictions: Vec<PredictionRecord>,
    pub errors: Vec<PredictionErrorRecord>,
}

/// Convert an in-memory prediction to its file record (positional indices
/// become proposal ids).
pub fn prediction_record(scene: &Scene, p: &GroundingPrediction) -> PredictionRecord {
    let box3d = &scene.proposals[p.predicted_index].box3d;
    PredictionRecord {
        query_id: p.query_id.clone(),
        scene_id: scene.scene_id.clone(),
        predicted_proposal_id: p.predicted_proposal_id,
        box3d: box3d.into(),
        mask: p.mask.clone(),
        scores: p.scores.iter().map(|&s| if s.is_finite() { Some(s) } else { None }).collect(),
        topk_categories: p.topk_categories.clone(),
        ranking: p.ranking.iter().map(|&i| scene.proposals[i].proposal_id).collect(),
        fallback: p.fallback,
    }
}

pub fn write_predictions(path: &Path, file: &PredictionFile) -> Result<(), ReportError> {
    let text =
        serde_json::to_string_pretty(file).map_err(|e| ReportError::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| ReportError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<PredictionFile, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ReportError::format(path, e.to_string()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsetRecord {
    pub name: String,
    pub value: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BreakdownRecord {
    pub overall: f64,
    pub count: usize,
    pub subsets: Vec<SubsetRecord>,
}

impl From<&MetricBreakdown> for BreakdownRecord {
    fn from(b: &MetricBreakdown) -> Self {
        Self {
            overall: b.overall,
            count: b.count,
            subsets: b
                .subsets
                .iter()
                .map(|s| SubsetRecord { name: s.name.to_string(), value: s.value, count: s.count })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AccRecord {
    pub m: f64,
    #[serde(flatten)]
    pub breakdown: BreakdownRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecallRecord {
    pub n: usize,
    pub m: f64,
    #[serde(flatten)]
    pub breakdown: BreakdownRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub provenance: Provenance,
    pub total_queries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_at_iou: Option<Vec<AccRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<BreakdownRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall_at_n_iou: Option<Vec<RecallRecord>>,
}

/// Which metric families to include in a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricSelection {
    pub acc_iou: bool,
    pub selection: bool,
    pub recall: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self { acc_iou: true, selection: true, recall: true }
    }
}

impl MetricSelection {
    /// Parse a comma-separated list: `acc_iou,selection,recall`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut selection = Self { acc_iou: false, selection: false, recall: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "acc_iou" => selection.acc_iou = true,
                "selection" => selection.selection = true,
                "recall" => selection.recall = true,
                other => return Err(format!("unknown metric {other:?}")),
            }
        }
        if selection == (Self { acc_iou: false, selection: false, recall: false }) {
            return Err("no metrics selected".to_string());
        }
        Ok(selection)
    }
}

pub fn report_file(
    provenance: Provenance,
    report: &EvalReport,
    selection: MetricSelection,
) -> ReportFile {
    ReportFile {
        provenance,
        total_queries: report.total_queries,
        acc_at_iou: selection.acc_iou.then(|| {
            report
                .acc_at_iou
                .iter()
                .map(|(m, b)| AccRecord { m: *m, breakdown: b.into() })
                .collect()
        }),
        selection: selection.selection.then(|| (&report.selection).into()),
        recall_at_n_iou: selection.recall.then(|| {
            report
                .recall_at_n_iou
                .iter()
                .map(|(n, m, b)| RecallRecord { n: *n, m: *m, breakdown: b.into() })
                .collect()
        }),
    }
}

pub fn write_report(path: &Path, file: &ReportFile) -> Result<(), ReportError> {
    let text =
        serde_json::to_string_pretty(file).map_err(|e| ReportError::format(path, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| ReportError::io(path, e))
}

/// Render the report as an aligned text table: one row per metric, one
/// column per subset plus the overall value.
pub fn render_table(file: &ReportFile) -> String {
    let mut rows: Vec<(String, &BreakdownRecord)> = Vec::new();
    if let Some(acc) = &file.acc_at_iou {
        for r in acc {
            rows.push((format!("Acc@{}IoU", trim_float(r.m)), &r.breakdown));
        }
    }
    if let Some(sel) = &file.selection {
        rows.push(("Selection".to_string(), sel));
    }
    if let Some(recall) = &file.recall_at_n_iou {
        for r in recall {
            rows.push((format!("R@{},IoU@{}", r.n, trim_float(r.m)), &r.breakdown));
        }
    }

    let mut columns = vec!["Metric".to_string()];
    if let Some((_, first)) = rows.first() {
        for s in &first.subsets {
            columns.push(pretty_subset(&s.name));
        }
    }
    columns.push("Overall".to_string());

    let mut table: Vec<Vec<String>> = vec![columns];
    for (name, b) in &rows {
        let mut row = vec![name.clone()];
        for s in &b.subsets {
            row.push(format!("{:.2}", s.value * 100.0));
        }
        row.push(format!("{:.2}", b.overall * 100.0));
        table.push(row);
    }

    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> =
            row.iter().zip(&widths).map(|(cell, w)| format!("{cell:>w$}", w = w)).collect();
        out.push_str(&line.join("  "));
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

fn pretty_subset(name: &str) -> String {
    match name {
        "unique" => "Unique".to_string(),
        "multiple" => "Multiple".to_string(),
        "easy" => "Easy".to_string(),
        "hard" => "Hard".to_string(),
        "view_dep" => "View-dep.".to_string(),
        "view_indep" => "View-indep.".to_string(),
        other => other.to_string(),
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
