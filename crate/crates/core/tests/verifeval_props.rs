use std::collections::BTreeSet;

use maskface::verifeval::{
    cluster_quality, evaluate_optimal, read_pairs, score_pairs, write_pairs, CalibrationConfig, FarDefinition,
    PairSides,
};
use maskface::{
    calibrate, cluster_identities, evaluate, generate_pairs, max_accuracy_threshold, threshold_at_far, Embedding,
    EmbeddingSet, Label, ScoredPair, ThresholdCalibration, ThresholdGrid,
};
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = Vec<ScoredPair>> {
    prop::collection::vec((0.0f64..4.0, any::<bool>()), 2..300).prop_filter_map("both labels", |raw| {
        let v: Vec<ScoredPair> = raw
            .into_iter()
            .map(|(d, pos)| {
                // Round a share of the draws onto the grid to exercise ties.
                let d = if d < 1.0 { (d * 100.0).round() / 100.0 } else { d };
                ScoredPair::new(d, if pos { Label::Positive } else { Label::Negative })
            })
            .collect();
        let has = |l| v.iter().any(|p| p.label == l);
        (has(Label::Positive) && has(Label::Negative)).then_some(v)
    })
}

fn embeddings() -> impl Strategy<Value = Vec<Embedding>> {
    prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 3), 0u32..5), 0..30).prop_filter_map(
        "degenerate vector",
        |raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, (v, id))| {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    (n > 1e-3).then(|| Embedding::normalized(v, id, i as u64, false).unwrap())
                })
                .collect()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn far_constrained_accuracy_never_beats_max(p in pairs(), far in 0.0f64..0.5) {
        let r = evaluate_optimal(&p, far, &ThresholdGrid::default(), FarDefinition::FalsePositiveRate).unwrap();
        prop_assert!(r.acc_at_far <= r.max_accuracy);
    }

    #[test]
    fn far_threshold_is_monotone(p in pairs(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let g = ThresholdGrid::default();
        for def in [FarDefinition::FalsePositiveRate, FarDefinition::FalseDiscoveryRate] {
            let t_lo = threshold_at_far(&p, lo, &g, def).unwrap().point.threshold;
            let t_hi = threshold_at_far(&p, hi, &g, def).unwrap().point.threshold;
            prop_assert!(t_lo <= t_hi, "{def:?}: {t_lo} > {t_hi}");
        }
    }

    #[test]
    fn far_negative_beyond_thresholds_adds_one_true_negative(
        p in pairs(),
        t1 in 0.0f64..4.0,
        t2 in 0.0f64..4.0,
        extra in 4.0f64..10.0,
    ) {
        let cal = ThresholdCalibration::fixed(t1, t2, 0.01);
        let before = evaluate(&p, &cal).unwrap();
        let mut more = p.clone();
        more.push(ScoredPair::new(extra, Label::Negative));
        let after = evaluate(&more, &cal).unwrap();
        for (b, a) in [(before.max_acc_counts, after.max_acc_counts), (before.at_far_counts, after.at_far_counts)] {
            prop_assert_eq!(a.tn, b.tn + 1);
            prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
        }
    }

    #[test]
    fn max_accuracy_is_the_best_grid_accuracy(p in pairs()) {
        let g = ThresholdGrid::default();
        let best = max_accuracy_threshold(&p, &g).unwrap();
        for t in g.values() {
            let correct = p
                .iter()
                .filter(|s| (s.distance <= t) == (s.label == Label::Positive))
                .count();
            prop_assert!(correct as f64 / p.len() as f64 <= best.accuracy + 1e-12);
        }
    }

    #[test]
    fn clustering_partitions_input(e in embeddings(), threshold in 0.0f64..4.0) {
        let c = cluster_identities(&e, threshold).unwrap();
        let mut seen = BTreeSet::new();
        for cluster in &c.clusters {
            prop_assert!(!cluster.is_empty());
            prop_assert!(cluster.windows(2).all(|w| w[0] < w[1]));
            for &m in cluster {
                prop_assert!(seen.insert(m), "index {m} in two clusters");
            }
        }
        prop_assert_eq!(seen, (0..e.len()).collect::<BTreeSet<_>>());
        let mins: Vec<usize> = c.clusters.iter().map(|m| m[0]).collect();
        prop_assert!(mins.windows(2).all(|w| w[0] < w[1]));
        if !e.is_empty() {
            let q = cluster_quality(&e, &c);
            prop_assert!(q.purity > 0.0 && q.purity <= 1.0);
        }
    }
}

fn two_sets() -> Vec<EmbeddingSet> {
    let mk = |masked: bool| {
        (0..6u32)
            .flat_map(|id| {
                (0..3u64).map(move |k| {
                    let th = id as f64 + 0.1 * k as f64 + if masked { 0.05 } else { 0.0 };
                    Embedding::normalized(vec![th.cos(), th.sin(), 0.3], id, 10 * id as u64 + k, masked).unwrap()
                })
            })
            .collect::<Vec<_>>()
    };
    vec![EmbeddingSet::new("clean", mk(false)), EmbeddingSet::new("masked", mk(true))]
}

#[test]
fn generated_pairs_survive_csv_and_score_by_label() {
    let sets = two_sets();
    let pairs = generate_pairs(&sets[0], &sets[1], 20, 60, 3, PairSides::Across).unwrap();
    assert_eq!(pairs.len(), 80);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    write_pairs(&path, &pairs).unwrap();
    assert_eq!(read_pairs(&path).unwrap(), pairs);
    let scored = score_pairs(&pairs, &sets).unwrap();
    assert_eq!(scored.iter().filter(|s| s.label == Label::Positive).count(), 20);
    assert!(scored.iter().all(|s| (0.0..=4.0 + 1e-12).contains(&s.distance)));
    assert_eq!(generate_pairs(&sets[0], &sets[1], 20, 60, 3, PairSides::Across).unwrap(), pairs);
}

#[test]
fn calibration_thresholds_stay_on_the_grid_range() {
    let sets = two_sets();
    let pairs = generate_pairs(&sets[0], &sets[0], 18, 100, 1, PairSides::Within).unwrap();
    let scored = score_pairs(&pairs, &sets).unwrap();
    let cal = calibrate(&scored, &CalibrationConfig::default()).unwrap();
    assert_eq!(cal.fold_thresholds.len(), cal.n_folds);
    for t in [cal.threshold_max_acc, cal.threshold_at_far] {
        assert!((0.0..=4.0).contains(&t));
    }
}
