use serde::{Deserialize, Serialize};

use super::{Label, ScoredPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Same,
    Different,
}

/// Inclusive boundary: a pair exactly at the threshold is SAME.
pub fn decide(distance: f64, threshold: f64) -> Decision {
    if distance <= threshold {
        Decision::Same
    } else {
        Decision::Different
    }
}

/// Candidate thresholds `start + step * i` for `i < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Default for ThresholdGrid {
    /// 0.00 to 4.00 in steps of 0.01, the squared-distance range of unit vectors.
    fn default() -> Self {
        ThresholdGrid {
            start: 0.0,
            step: 0.01,
            count: 401,
        }
    }
}

impl ThresholdGrid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step > 0.0 && stop >= start) {
            return Err(Error::Validation(format!(
                "threshold grid needs finite start <= stop and positive step, got {start}..{stop} by {step}"
            )));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok(ThresholdGrid { start, step, count })
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.value(i))
    }

    /// Threshold for a fractional grid position.
    pub fn at(&self, position: f64) -> f64 {
        self.start + self.step * position
    }
}

/// Which ratio the FAR constraint bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FarDefinition {
    /// FP / (FP + TN): accepted impostors over all negative pairs.
    #[default]
    FalsePositiveRate,
    /// FP / (TP + FP), the false-discovery form.
    FalseDiscoveryRate,
}

impl std::str::FromStr for FarDefinition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fpr" | "false_positive_rate" => Ok(FarDefinition::FalsePositiveRate),
            "fdr" | "false_discovery_rate" => Ok(FarDefinition::FalseDiscoveryRate),
            _ => Err(Error::Validation(format!(
                "unknown FAR definition {s:?}; expected fpr or fdr"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn at(pairs: &[ScoredPair], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for p in pairs {
            match (p.label, decide(p.distance, threshold)) {
                (Label::Positive, Decision::Same) => c.tp += 1,
                (Label::Positive, Decision::Different) => c.fn_ += 1,
                (Label::Negative, Decision::Same) => c.fp += 1,
                (Label::Negative, Decision::Different) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn far(&self, def: FarDefinition) -> f64 {
        match def {
            FarDefinition::FalsePositiveRate => ratio(self.fp, self.fp + self.tn),
            FarDefinition::FalseDiscoveryRate => ratio(self.fp, self.tp + self.fp),
        }
    }
}

/// Sorted distances per label, so confusion counts at any threshold are two
/// binary searches.
struct Sweep {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl Sweep {
    fn new(pairs: &[ScoredPair]) -> Result<Self> {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for p in pairs {
            if !p.distance.is_finite() {
                return Err(Error::Validation(format!("non-finite pair distance {}", p.distance)));
            }
            match p.label {
                Label::Positive => pos.push(p.distance),
                Label::Negative => neg.push(p.distance),
            }
        }
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        Ok(Sweep { pos, neg })
    }

    fn confusion(&self, t: f64) -> Confusion {
        let tp = self.pos.partition_point(|d| *d <= t);
        let fp = self.neg.partition_point(|d| *d <= t);
        Confusion {
            tp,
            fn_: self.pos.len() - tp,
            fp,
            tn: self.neg.len() - fp,
        }
    }
}

/// A threshold with its confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Grid position (fractional after averaging).
    pub grid_position: f64,
    pub threshold: f64,
    pub counts: Confusion,
    pub accuracy: f64,
}

impl OperatingPoint {
    fn new(grid: &ThresholdGrid, position: f64, counts: Confusion) -> Self {
        OperatingPoint {
            grid_position: position,
            threshold: grid.at(position),
            counts,
            accuracy: counts.accuracy(),
        }
    }
}

/// Smallest grid threshold reaching the highest accuracy.
pub fn max_accuracy_threshold(pairs: &[ScoredPair], grid: &ThresholdGrid) -> Result<OperatingPoint> {
    let sweep = Sweep::new(pairs)?;
    if sweep.pos.is_empty() || sweep.neg.is_empty() {
        return Err(Error::Argument(
            "max-accuracy sweep needs at least one positive and one negative pair".into(),
        ));
    }
    let mut best: Option<(usize, Confusion)> = None;
    for i in 0..grid.count {
        let c = sweep.confusion(grid.value(i));
        if best.map_or(true, |(_, b)| c.tp + c.tn > b.tp + b.tn) {
            best = Some((i, c));
        }
    }
    let (i, c) = best.ok_or_else(|| Error::Argument("empty threshold grid".into()))?;
    Ok(OperatingPoint::new(grid, i as f64, c))
}

/// FAR-constrained operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarPoint {
    pub point: OperatingPoint,
    pub far_target: f64,
    pub far_achieved: f64,
    /// Some grid threshold met the target; otherwise `point` is the grid minimum.
    pub met: bool,
    /// A single false acceptance fits under the target, i.e. `1/#neg <= target`
    /// for the FP-rate form. When false, the target can only be met with zero
    /// false acceptances.
    pub resolvable: bool,
}

/// Largest grid threshold whose FAR is within `far_target`.
pub fn threshold_at_far(
    pairs: &[ScoredPair],
    far_target: f64,
    grid: &ThresholdGrid,
    def: FarDefinition,
) -> Result<FarPoint> {
    if !(0.0..=1.0).contains(&far_target) {
        return Err(Error::Validation(format!("FAR target must lie in [0, 1], got {far_target}")));
    }
    let sweep = Sweep::new(pairs)?;
    if sweep.neg.is_empty() {
        return Err(Error::Argument("FAR needs at least one negative pair".into()));
    }
    if grid.count == 0 {
        return Err(Error::Argument("empty threshold grid".into()));
    }
    let found = (0..grid.count).rev().find_map(|i| {
        let c = sweep.confusion(grid.value(i));
        (c.far(def) <= far_target).then_some((i, c))
    });
    let met = found.is_some();
    let (i, c) = found.unwrap_or_else(|| (0, sweep.confusion(grid.value(0))));
    let resolvable = match def {
        FarDefinition::FalsePositiveRate => 1.0 / sweep.neg.len() as f64 <= far_target,
        FarDefinition::FalseDiscoveryRate => far_target > 0.0,
    };
    Ok(FarPoint {
        point: OperatingPoint::new(grid, i as f64, c),
        far_target,
        far_achieved: c.far(def),
        met,
        resolvable,
    })
}

/// Metrics at a max-accuracy and a FAR-constrained threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub max_accuracy: f64,
    pub acc_at_far: f64,
    pub tpr_at_far: f64,
    pub far_achieved: f64,
    pub far_target: f64,
    pub far_definition: FarDefinition,
    pub threshold_max_acc: f64,
    pub threshold_at_far: f64,
    pub max_acc_counts: Confusion,
    pub at_far_counts: Confusion,
    pub positives: usize,
    pub negatives: usize,
}

impl MetricsReport {
    fn from_counts(
        max_acc: (f64, Confusion),
        at_far: (f64, Confusion),
        far_target: f64,
        def: FarDefinition,
    ) -> Self {
        let c = at_far.1;
        MetricsReport {
            max_accuracy: max_acc.1.accuracy(),
            acc_at_far: c.accuracy(),
            tpr_at_far: c.tpr(),
            far_achieved: c.far(def),
            far_target,
            far_definition: def,
            threshold_max_acc: max_acc.0,
            threshold_at_far: at_far.0,
            max_acc_counts: max_acc.1,
            at_far_counts: c,
            positives: c.tp + c.fn_,
            negatives: c.fp + c.tn,
        }
    }
}

/// Metrics of `pairs` at fixed calibrated thresholds.
pub fn evaluate(pairs: &[ScoredPair], cal: &ThresholdCalibration) -> Result<MetricsReport> {
    let sweep = Sweep::new(pairs)?;
    Ok(MetricsReport::from_counts(
        (cal.threshold_max_acc, sweep.confusion(cal.threshold_max_acc)),
        (cal.threshold_at_far, sweep.confusion(cal.threshold_at_far)),
        cal.far_target,
        cal.far_definition,
    ))
}

/// Metrics of `pairs` at thresholds optimized on `pairs` themselves.
pub fn evaluate_optimal(
    pairs: &[ScoredPair],
    far_target: f64,
    grid: &ThresholdGrid,
    def: FarDefinition,
) -> Result<MetricsReport> {
    let best = max_accuracy_threshold(pairs, grid)?;
    let far = threshold_at_far(pairs, far_target, grid, def)?;
    Ok(MetricsReport::from_counts(
        (best.threshold, best.counts),
        (far.point.threshold, far.point.counts),
        far_target,
        def,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_folds: usize,
    pub far_target: f64,
    pub far_definition: FarDefinition,
    pub grid: ThresholdGrid,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            n_folds: 10,
            far_target: 0.001,
            far_definition: FarDefinition::FalsePositiveRate,
            grid: ThresholdGrid::default(),
        }
    }
}

/// Optima of one training union (all folds but `held_out`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldThreshold {
    pub held_out: usize,
    pub max_acc: f64,
    pub at_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub threshold_max_acc: f64,
    pub threshold_at_far: f64,
    pub far_target: f64,
    pub far_definition: FarDefinition,
    pub n_folds: usize,
    pub fold_thresholds: Vec<FoldThreshold>,
}

impl ThresholdCalibration {
    /// Calibration with the given thresholds and no fold history.
    pub fn fixed(threshold_max_acc: f64, threshold_at_far: f64, far_target: f64) -> Self {
        ThresholdCalibration {
            threshold_max_acc,
            threshold_at_far,
            far_target,
            far_definition: FarDefinition::default(),
            n_folds: 0,
            fold_thresholds: Vec::new(),
        }
    }
}

/// Fold index per pair: positives and negatives are each dealt round-robin
/// in input order, so every fold gets a near-equal share of both labels.
pub fn stratified_folds(pairs: &[ScoredPair], n_folds: usize) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(Error::Validation(format!("need at least 2 folds, got {n_folds}")));
    }
    let npos = pairs.iter().filter(|p| p.label == Label::Positive).count();
    let nneg = pairs.len() - npos;
    if nneg < n_folds || npos < n_folds {
        return Err(Error::Validation(format!(
            "cannot stratify {npos} positive and {nneg} negative pairs into {n_folds} folds; every fold needs both labels"
        )));
    }
    let (mut ip, mut ineg) = (0, 0);
    Ok(pairs
        .iter()
        .map(|p| {
            let k = match p.label {
                Label::Positive => &mut ip,
                Label::Negative => &mut ineg,
            };
            let f = *k % n_folds;
            *k += 1;
            f
        })
        .collect())
}

/// For each held-out fold, find the grid optima on the union of the other
/// folds; the calibrated thresholds are the mean grid positions of those
/// optima across all rotations.
pub fn calibrate(pairs: &[ScoredPair], cfg: &CalibrationConfig) -> Result<ThresholdCalibration> {
    let folds = stratified_folds(pairs, cfg.n_folds)?;
    let mut fold_thresholds = Vec::with_capacity(cfg.n_folds);
    let (mut sum_acc, mut sum_far) = (0.0, 0.0);
    for held_out in 0..cfg.n_folds {
        let train: Vec<ScoredPair> = pairs
            .iter()
            .zip(&folds)
            .filter(|(_, f)| **f != held_out)
            .map(|(p, _)| *p)
            .collect();
        let best = max_accuracy_threshold(&train, &cfg.grid)?;
        let far = threshold_at_far(&train, cfg.far_target, &cfg.grid, cfg.far_definition)?;
        sum_acc += best.grid_position;
        sum_far += far.point.grid_position;
        fold_thresholds.push(FoldThreshold {
            held_out,
            max_acc: best.threshold,
            at_far: far.point.threshold,
        });
    }
    let n = cfg.n_folds as f64;
    Ok(ThresholdCalibration {
        threshold_max_acc: cfg.grid.at(sum_acc / n),
        threshold_at_far: cfg.grid.at(sum_far / n),
        far_target: cfg.far_target,
        far_definition: cfg.far_definition,
        n_folds: cfg.n_folds,
        fold_thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(pos: &[f64], neg: &[f64]) -> Vec<ScoredPair> {
        pos.iter()
            .map(|&d| ScoredPair::new(d, Label::Positive))
            .chain(neg.iter().map(|&d| ScoredPair::new(d, Label::Negative)))
            .collect()
    }

    #[test]
    fn decide_is_inclusive() {
        assert_eq!(decide(0.0, 1.0), Decision::Same);
        assert_eq!(decide(4.0, 1.0), Decision::Different);
        assert_eq!(decide(1.0, 1.0), Decision::Same);
    }

    #[test]
    fn grid_bounds() {
        let g = ThresholdGrid::default();
        assert_eq!(g.value(0), 0.0);
        assert!((g.value(400) - 4.0).abs() < 1e-12);
        assert_eq!(ThresholdGrid::new(0.0, 4.0, 0.01).unwrap().count, 401);
    }

    #[test]
    fn separable_max_accuracy() {
        let pairs = scored(&[0.1, 0.2], &[1.0, 1.1]);
        let p = max_accuracy_threshold(&pairs, &ThresholdGrid::default()).unwrap();
        assert_eq!(p.accuracy, 1.0);
        // the smallest such grid point; 0.2 itself counts as SAME
        assert!((p.threshold - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tied_distances_give_half() {
        let pairs = scored(&[1.5, 1.5], &[1.5, 1.5]);
        let p = max_accuracy_threshold(&pairs, &ThresholdGrid::default()).unwrap();
        assert_eq!(p.accuracy, 0.5);
        assert_eq!(p.threshold, 0.0);
    }

    #[test]
    fn empty_pairs_rejected() {
        assert!(max_accuracy_threshold(&[], &ThresholdGrid::default()).is_err());
        let only_pos = scored(&[0.1], &[]);
        assert!(threshold_at_far(&only_pos, 0.1, &ThresholdGrid::default(), FarDefinition::default()).is_err());
    }

    #[test]
    fn far_quarter_lands_below_second_negative() {
        let pairs = scored(&[], &[1.0, 2.0, 3.0, 4.0]);
        let f = threshold_at_far(&pairs, 0.25, &ThresholdGrid::default(), FarDefinition::default()).unwrap();
        assert!((f.point.threshold - 1.99).abs() < 1e-9);
        assert_eq!(f.point.counts.fp, 1);
        assert!(f.met && f.resolvable);
    }

    #[test]
    fn zero_far_stays_below_all_negatives() {
        let pairs = scored(&[0.05], &[0.5, 0.7]);
        let f = threshold_at_far(&pairs, 0.0, &ThresholdGrid::default(), FarDefinition::default()).unwrap();
        assert!(f.point.threshold < 0.5);
        assert_eq!(f.point.counts.fp, 0);
        assert!(!f.resolvable);
    }

    #[test]
    fn unmeetable_target_returns_grid_minimum() {
        let pairs = scored(&[0.1], &[0.0, 2.0]);
        let f = threshold_at_far(&pairs, 0.1, &ThresholdGrid::default(), FarDefinition::default()).unwrap();
        assert!(!f.met);
        assert_eq!(f.point.threshold, 0.0);
        assert_eq!(f.far_achieved, 0.5);
    }

    #[test]
    fn evaluate_extremes() {
        let pairs = scored(&[0.1, 0.3], &[1.0, 1.2, 1.4]);
        let r = evaluate(&pairs, &ThresholdCalibration::fixed(0.5, 0.5, 0.001)).unwrap();
        assert_eq!((r.max_accuracy, r.acc_at_far, r.tpr_at_far), (1.0, 1.0, 1.0));
        let r = evaluate(&pairs, &ThresholdCalibration::fixed(0.01, 0.01, 0.001)).unwrap();
        assert_eq!(r.tpr_at_far, 0.0);
        assert_eq!(r.acc_at_far, 3.0 / 5.0);
    }

    #[test]
    fn fdr_definition() {
        let c = Confusion { tp: 3, tn: 5, fp: 1, fn_: 1 };
        assert_eq!(c.far(FarDefinition::FalsePositiveRate), 1.0 / 6.0);
        assert_eq!(c.far(FarDefinition::FalseDiscoveryRate), 0.25);
    }

    #[test]
    fn calibration_of_separable_folds() {
        let pos: Vec<f64> = (0..20).map(|i| 0.305 + 0.01 * i as f64).collect();
        let neg: Vec<f64> = (0..20).map(|i| 2.0 + 0.01 * i as f64).collect();
        let pairs = scored(&pos, &neg);
        let cal = calibrate(&pairs, &CalibrationConfig::default()).unwrap();
        assert_eq!(cal.fold_thresholds.len(), 10);
        assert!(cal.threshold_max_acc > 0.495 && cal.threshold_max_acc < 2.0);
        assert!(cal.threshold_at_far > 0.495 && cal.threshold_at_far < 2.0);
    }

    #[test]
    fn stratification_needs_negatives_per_fold() {
        let pairs = scored(&[0.1; 20], &[1.0; 5]);
        assert!(calibrate(&pairs, &CalibrationConfig::default()).is_err());
    }
}
