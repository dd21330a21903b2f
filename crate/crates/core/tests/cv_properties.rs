mod common;

use std::collections::HashSet;
use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use common::clustered_frame;
use proptest::prelude::*;
use svyml::cv::{
    assign_psu_folds, assign_random_folds, check_leakage, run_cv, screen_folds, CvMetric, FoldPlan,
};
use svyml::metrics::Metric;
use svyml::model::{ConstantModel, Predictor};
use svyml::{DesignBuilder, DesignFrame};

fn assert_partition(plan: &FoldPlan) {
    for r in 0..plan.repeats {
        let mut seen = vec![0usize; plan.rows()];
        for f in 0..plan.k {
            for i in plan.test_rows(r, f) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psu_folds_partition_and_never_leak(
        seed in 0u64..100_000,
        strata in 1usize..6,
        psus in 2usize..7,
        k in 1usize..6,
        repeats in 1usize..4,
    ) {
        let frame = clustered_frame(strata, psus, 3, seed);
        let plan = assign_psu_folds(&frame, k, repeats, seed).unwrap();
        assert_partition(&plan);
        prop_assert!(check_leakage(&plan, &frame).is_ok());
        // Exhaustive: the (stratum, PSU) sets of distinct folds are disjoint.
        for r in 0..repeats {
            let sets: Vec<HashSet<usize>> = (0..k)
                .map(|f| plan.test_rows(r, f).into_iter().map(|i| frame.psus()[i]).collect())
                .collect();
            for a in 0..k {
                for b in a + 1..k {
                    prop_assert!(sets[a].is_disjoint(&sets[b]));
                }
            }
        }
        prop_assert_eq!(&plan, &assign_psu_folds(&frame, k, repeats, seed).unwrap());
    }

    #[test]
    fn random_folds_partition_and_balance(seed in 0u64..100_000, n_psu in 2usize..6, k in 1usize..8) {
        let frame = clustered_frame(2, n_psu, 4, seed);
        let plan = assign_random_folds(&frame, k, 2, seed).unwrap();
        assert_partition(&plan);
        for r in 0..2 {
            let sizes: Vec<usize> = (0..k).map(|f| plan.test_rows(r, f).len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(&plan, &assign_random_folds(&frame, k, 2, seed).unwrap());
    }
}

#[test]
fn exact_divisibility_gives_two_psus_per_stratum_per_fold() {
    let frame = clustered_frame(3, 6, 2, 1);
    let plan = assign_psu_folds(&frame, 3, 4, 8).unwrap();
    for r in 0..4 {
        for f in 0..3 {
            let psus: HashSet<usize> = plan.test_rows(r, f).into_iter().map(|i| frame.psus()[i]).collect();
            let mut per_stratum = [0usize; 3];
            for p in psus {
                per_stratum[frame.psu_strata()[p]] += 1;
            }
            assert_eq!(per_stratum, [2, 2, 2]);
        }
    }
}

#[test]
fn single_fold_is_the_whole_frame() {
    let frame = clustered_frame(2, 3, 2, 1);
    let plan = assign_psu_folds(&frame, 1, 1, 0).unwrap();
    assert_eq!(plan.test_rows(0, 0).len(), frame.len());
}

#[test]
fn plan_csv_is_byte_identical_for_a_fixed_seed() {
    let frame = clustered_frame(3, 4, 3, 2);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assign_psu_folds(&frame, 3, 2, 11).unwrap().write_csv(&a).unwrap();
    assign_psu_folds(&frame, 3, 2, 11).unwrap().write_csv(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn random_folds_split_psus() {
    let frame = clustered_frame(5, 3, 10, 3);
    let plan = assign_random_folds(&frame, 5, 3, 1).unwrap();
    assert!(check_leakage(&plan, &frame).is_err());
}

#[test]
fn screening_drops_exactly_the_fold_without_positives() {
    // One stratum of four PSUs; PSU "3" has no positives.
    let n = 16;
    let psu: Vec<String> = (0..n).map(|i| (i / 4 + 1).to_string()).collect();
    let y: Vec<f64> = (0..n).map(|i| if i / 4 == 2 { 0.0 } else { (i % 2) as f64 }).collect();
    let frame = DesignBuilder::new(vec![1.0; n], vec!["1".into(); n], psu)
        .values("y", &y)
        .outcome("y")
        .build()
        .unwrap();
    let plan = assign_psu_folds(&frame, 4, 2, 5).unwrap();
    let all = screen_folds(&plan, &frame, 0, 0).unwrap();
    assert_eq!(all.retained_count(), 8);
    let screened = screen_folds(&plan, &frame, 1, 1).unwrap();
    assert_eq!(screened.retained_count(), 6);
    for r in 0..2 {
        let empty_fold = plan.assignment[r][8];
        for f in 0..4 {
            assert_eq!(screened.retained[r][f], f != empty_fold);
        }
    }
}

/// Records whether it is ever asked to score a row from a training PSU.
struct LeakProbe {
    names: Vec<String>,
    train: HashSet<u64>,
    leaked: Arc<AtomicBool>,
}

impl Predictor for LeakProbe {
    fn feature_names(&self) -> &[String] {
        &self.names
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        if self.train.contains(&(x[1] as u64)) {
            self.leaked.store(true, Ordering::SeqCst);
        }
        x[0]
    }
}

fn with_psu_feature(frame: &DesignFrame) -> DesignFrame {
    let ids = frame.psus().iter().map(|&p| Some(p as f64)).collect();
    frame.with_variable("psu_id", ids).unwrap().with_roles(Some("b"), &["x1", "psu_id"]).unwrap()
}

#[test]
fn run_cv_never_scores_training_psus() {
    let frame = with_psu_feature(&clustered_frame(4, 5, 12, 7));
    let plan = screen_folds(&assign_psu_folds(&frame, 5, 3, 2).unwrap(), &frame, 0, 1).unwrap();
    let leaked = Arc::new(AtomicBool::new(false));
    let fits = AtomicUsize::new(0);
    let ids = frame.variable("psu_id").unwrap().to_vec();
    let scores = run_cv(
        &plan,
        &frame,
        |_f: &DesignFrame, rows: &[usize]| {
            fits.fetch_add(1, Ordering::SeqCst);
            Ok::<_, Infallible>(LeakProbe {
                names: vec!["x1".into(), "psu_id".into()],
                train: rows.iter().map(|&i| ids[i].unwrap() as u64).collect(),
                leaked: leaked.clone(),
            })
        },
        &CvMetric::new(Metric::Auroc, true),
    )
    .unwrap();
    assert_eq!(fits.load(Ordering::SeqCst), plan.retained_count());
    assert_eq!(scores.retained_count(), plan.retained_count());
    assert!(!leaked.load(Ordering::SeqCst));
}

#[test]
fn constant_trainer_scores_one_half_everywhere() {
    let frame = clustered_frame(3, 4, 10, 4);
    let plan = screen_folds(&assign_psu_folds(&frame, 4, 2, 9).unwrap(), &frame, 0, 1).unwrap();
    let names = frame.feature_names().to_vec();
    let scores = run_cv(
        &plan,
        &frame,
        |_f: &DesignFrame, _rows: &[usize]| Ok::<_, Infallible>(ConstantModel { value: 0.2, feature_names: names.clone() }),
        &CvMetric::new(Metric::Auroc, true),
    )
    .unwrap();
    assert!(scores.retained().iter().all(|&v| v == 0.5));
}

#[test]
fn run_cv_is_deterministic() {
    let frame = clustered_frame(3, 4, 10, 4);
    let plan = assign_random_folds(&frame, 3, 2, 9).unwrap();
    let run = || {
        run_cv(
            &plan,
            &frame,
            |f: &DesignFrame, rows: &[usize]| {
                svyml::model::fit_weighted_logit_rows(f, f.feature_names(), "b", Some(rows), true, Default::default())
            },
            &CvMetric::new(Metric::Auroc, false),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}
