//! Verification protocol: pair generation, threshold sweeps and fold
//! calibration, accuracy/TPR at a FAR constraint, cross-dataset heatmaps
//! and identity clustering. Distances are squared L2 between unit vectors.

mod cluster;
mod heatmap;
mod metrics;
mod pairs;

use serde::{Deserialize, Serialize};

pub use cluster::{cluster_identities, cluster_quality, ClusterQuality, Clustering};
pub use heatmap::{heatmap, CellThresholds, HeatmapCell, HeatmapConfig, HeatmapGrid};
pub use metrics::{
    calibrate, decide, evaluate, evaluate_optimal, max_accuracy_threshold, stratified_folds,
    threshold_at_far, CalibrationConfig, Confusion, Decision, FarDefinition, FarPoint,
    FoldThreshold, MetricsReport, OperatingPoint, ThresholdCalibration, ThresholdGrid,
};
pub use pairs::{
    generate_pairs, pair_availability, read_pairs, score_pairs, write_pairs, EmbeddingSet,
    PairSides, VerificationPair,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Positive,
    Negative,
}

/// A pair reduced to its distance and ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub distance: f64,
    pub label: Label,
}

impl ScoredPair {
    pub fn new(distance: f64, label: Label) -> Self {
        ScoredPair { distance, label }
    }
}
