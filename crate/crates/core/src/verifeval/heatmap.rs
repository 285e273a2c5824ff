use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    evaluate, evaluate_optimal, generate_pairs, pair_availability, score_pairs, EmbeddingSet,
    FarDefinition, MetricsReport, PairSides, ThresholdCalibration, ThresholdGrid,
};
use crate::error::{Error, Result};

/// Thresholds used in every cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellThresholds {
    /// One calibration shared by all cells.
    Calibrated(ThresholdCalibration),
    /// Each cell optimized on its own pairs.
    PerCell {
        far_target: f64,
        grid: ThresholdGrid,
        far_definition: FarDefinition,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    /// Requested pairs per cell; a cell with fewer available uses them all.
    pub n_pos: usize,
    pub n_neg: usize,
    /// Shared by every cell, so cells built from identical sets coincide.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub template_tag: String,
    pub unknown_tag: String,
    pub n_pos: usize,
    pub n_neg: usize,
    /// None when the cell has no positive or no negative pairs.
    pub report: Option<MetricsReport>,
}

impl HeatmapCell {
    pub fn insufficient(&self) -> bool {
        self.report.is_none()
    }
}

/// Row-major over unknown tags, then template tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub tags: Vec<String>,
    pub cells: Vec<HeatmapCell>,
}

fn cell(t: &EmbeddingSet, u: &EmbeddingSet, th: &CellThresholds, cfg: &HeatmapConfig) -> Result<HeatmapCell> {
    let (ap, an) = pair_availability(t, u, PairSides::Across);
    let (n_pos, n_neg) = (cfg.n_pos.min(ap), cfg.n_neg.min(an));
    let mut out = HeatmapCell {
        template_tag: t.tag.clone(),
        unknown_tag: u.tag.clone(),
        n_pos,
        n_neg,
        report: None,
    };
    if n_pos == 0 || n_neg == 0 {
        return Ok(out);
    }
    let pairs = generate_pairs(t, u, n_pos, n_neg, cfg.seed, PairSides::Across)?;
    let scored = score_pairs(&pairs, &[t.clone(), u.clone()])?;
    out.report = Some(match th {
        CellThresholds::Calibrated(cal) => evaluate(&scored, cal)?,
        CellThresholds::PerCell {
            far_target,
            grid,
            far_definition,
        } => evaluate_optimal(&scored, *far_target, grid, *far_definition)?,
    });
    Ok(out)
}

/// Evaluate every (template, unknown) combination of the given sets.
pub fn heatmap(sets: &[EmbeddingSet], thresholds: &CellThresholds, cfg: &HeatmapConfig) -> Result<HeatmapGrid> {
    for (i, s) in sets.iter().enumerate() {
        if sets[..i].iter().any(|o| o.tag == s.tag) {
            return Err(Error::Validation(format!("duplicate dataset tag {:?}", s.tag)));
        }
    }
    let combos: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|u| (0..sets.len()).map(move |t| (t, u)))
        .collect();
    let cells = combos
        .par_iter()
        .map(|&(t, u)| cell(&sets[t], &sets[u], thresholds, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(HeatmapGrid {
        tags: sets.iter().map(|s| s.tag.clone()).collect(),
        cells,
    })
}

impl HeatmapGrid {
    pub fn cell(&self, template: &str, unknown: &str) -> Option<&HeatmapCell> {
        self.cells
            .iter()
            .find(|c| c.template_tag == template && c.unknown_tag == unknown)
    }

    /// One row per cell: `template_tag,unknown_tag,max_acc,acc_at_far,tpr_at_far,far_achieved`,
    /// with `NA` metrics for insufficient cells.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "template_tag",
            "unknown_tag",
            "max_acc",
            "acc_at_far",
            "tpr_at_far",
            "far_achieved",
        ])?;
        for c in &self.cells {
            let m = match &c.report {
                Some(r) => [r.max_accuracy, r.acc_at_far, r.tpr_at_far, r.far_achieved].map(|v| format!("{v:.6}")),
                None => ["NA"; 4].map(String::from),
            };
            w.write_record([c.template_tag.as_str(), c.unknown_tag.as_str(), &m[0], &m[1], &m[2], &m[3]])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Argument(format!("csv buffer: {}", e.error())))?;
        String::from_utf8(bytes).map_err(|e| Error::Argument(e.to_string()))
    }

    /// Matrices indexed `[unknown][template]` (unknown on the vertical axis),
    /// `null` for insufficient cells.
    pub fn plot_data(&self) -> serde_json::Value {
        let n = self.tags.len();
        let matrix = |f: fn(&MetricsReport) -> f64| -> Vec<Vec<Option<f64>>> {
            (0..n)
                .map(|u| (0..n).map(|t| self.cells[u * n + t].report.as_ref().map(f)).collect())
                .collect()
        };
        json!({
            "template_tags": self.tags,
            "unknown_tags": self.tags,
            "max_acc": matrix(|r| r.max_accuracy),
            "acc_at_far": matrix(|r| r.acc_at_far),
            "tpr_at_far": matrix(|r| r.tpr_at_far),
            "far_achieved": matrix(|r| r.far_achieved),
        })
    }
}
