mod common;

use common::clustered_frame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use svyml::metrics::{metric_ci, unweighted_auroc_delong_ci, CiMethod, Metric, ResampleUnit, ScoredSet};
use svyml::replicate::ReplicateInterval;

#[test]
fn delong_interval_covers_half_under_independence() {
    let covered = (0..500u64)
        .into_par_iter()
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..2000).map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 }).collect();
            let s: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
            let ci = unweighted_auroc_delong_ci(&ScoredSet::unweighted(&y, &s).unwrap()).unwrap().ci95;
            ci.0 <= 0.5 && 0.5 <= ci.1
        })
        .count();
    let rate = covered as f64 / 500.0;
    // Binomial sd at 95% over 500 draws is about 0.01.
    assert!((0.92..=0.98).contains(&rate), "coverage {rate}");
}

#[test]
fn bootstrap_interval_width_is_stable_in_b() {
    let frame = clustered_frame(10, 4, 25, 17);
    let x1 = frame.variable("x1").unwrap();
    let scores: Vec<f64> = x1.iter().map(|v| v.unwrap()).collect();
    let width = |b: usize| {
        let method = CiMethod::Bootstrap {
            b,
            seed: 3,
            unit: ResampleUnit::Psu,
            interval: ReplicateInterval::Percentile,
        };
        let ci = metric_ci(&frame, &scores, Metric::Auroc, true, &method).unwrap().ci95;
        ci.1 - ci.0
    };
    let (small, large) = (width(100), width(2000));
    assert!((small - large).abs() <= 0.2 * large, "B=100 width {small}, B=2000 width {large}");
}

#[test]
fn constant_metric_gives_degenerate_interval() {
    let frame = clustered_frame(4, 3, 10, 2);
    let scores = vec![0.3; frame.len()];
    let method = CiMethod::Bootstrap {
        b: 50,
        seed: 1,
        unit: ResampleUnit::Psu,
        interval: ReplicateInterval::Percentile,
    };
    let est = metric_ci(&frame, &scores, Metric::Auroc, true, &method).unwrap();
    assert_eq!(est.point, 0.5);
    assert_eq!(est.se, 0.0);
    assert_eq!(est.ci95, (0.5, 0.5));
}

#[test]
fn misaligned_scores_are_rejected() {
    let frame = clustered_frame(2, 2, 5, 2);
    let method = CiMethod::Bootstrap {
        b: 5,
        seed: 1,
        unit: ResampleUnit::Row,
        interval: ReplicateInterval::Wald,
    };
    assert!(metric_ci(&frame, &[0.1, 0.2], Metric::Auroc, true, &method).is_err());
}
