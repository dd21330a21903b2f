use rayon::prelude::*;
use svyml::estimate::{unweighted_mean, weighted_mean};
use svyml::synth::{
    census_value, draw_sample, gen_population, CensusStatistic, Population, PopulationSpec, PsuTake, SampleDesign,
    SelectionModel, UnitTake, UnitVar, REFERENCE_POPULATION_SEED,
};

fn reference() -> Population {
    gen_population(&PopulationSpec::reference(), REFERENCE_POPULATION_SEED).unwrap()
}

#[test]
fn reference_census_golden_values() {
    let pop = reference();
    assert_eq!(pop.size(), 79_939);
    let cases = pop.y.iter().filter(|&&y| y == 1.0).count();
    assert_eq!(cases, 14_588);
    let prevalence = census_value(&pop, &CensusStatistic::Proportion(UnitVar::Y)).unwrap();
    assert_eq!(prevalence, 14_588.0 / 79_939.0);
}

#[test]
fn taylor_intervals_cover_at_nominal_rate() {
    let pop = reference();
    let truth = census_value(&pop, &CensusStatistic::Mean(UnitVar::Y)).unwrap();
    let draws = 1000u64;
    let covered = (0..draws)
        .into_par_iter()
        .filter(|&seed| {
            let s = draw_sample(&pop, &SampleDesign::reference(), seed).unwrap();
            let est = weighted_mean(&s, "y").unwrap();
            est.ci95.0 <= truth && truth <= est.ci95.1
        })
        .count();
    let rate = covered as f64 / draws as f64;
    assert!((0.93..=0.97).contains(&rate), "coverage {rate}");
}

#[test]
fn horvitz_thompson_is_consistent() {
    let pop = reference();
    let truth = census_value(&pop, &CensusStatistic::Mean(UnitVar::Y)).unwrap();
    let within = (0..200u64)
        .into_par_iter()
        .filter(|&seed| {
            let s = draw_sample(&pop, &SampleDesign::reference(), 1_000 + seed).unwrap();
            let est = weighted_mean(&s, "y").unwrap();
            (est.point - truth).abs() < 3.0 * est.se
        })
        .count();
    assert!(within >= 190, "{within}/200 within 3 SE");

    // Mean absolute error falls as PSUs per stratum grow.
    let mae = |m: usize| -> f64 {
        let design = SampleDesign {
            psus: PsuTake::Uniform(m),
            units: UnitTake::Expected(10.0),
        };
        (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let s = draw_sample(&pop, &design, 5_000 + seed).unwrap();
                (weighted_mean(&s, "y").unwrap().point - truth).abs()
            })
            .sum::<f64>()
            / 100.0
    };
    let (a, b, c) = (mae(2), mae(8), mae(32));
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn unweighted_mean_is_biased_under_informative_selection() {
    let pop = reference();
    let truth = census_value(&pop, &CensusStatistic::Mean(UnitVar::Y)).unwrap();
    let worse = (0..200u64)
        .into_par_iter()
        .filter(|&seed| {
            let s = draw_sample(&pop, &SampleDesign::reference(), 9_000 + seed).unwrap();
            let w = weighted_mean(&s, "y").unwrap().point;
            let u = unweighted_mean(&s, "y").unwrap().point;
            (u - truth).abs() > (w - truth).abs()
        })
        .count();
    assert!(worse >= 180, "{worse}/200");
}

#[test]
fn oversampled_high_risk_stratum_inflates_unweighted_prevalence() {
    let mut spec = PopulationSpec::reference();
    spec.selection = SelectionModel::default();
    let pop = gen_population(&spec, 3).unwrap();
    let mut take = vec![6; 10];
    take[9] = 18;
    let design = SampleDesign {
        psus: PsuTake::PerStratum(take),
        units: UnitTake::Expected(10.0),
    };
    let gaps: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let s = draw_sample(&pop, &design, seed).unwrap();
            unweighted_mean(&s, "y").unwrap().point - weighted_mean(&s, "y").unwrap().point
        })
        .collect();
    let positive = gaps.iter().filter(|g| **g > 0.0).count();
    assert!(gaps.iter().sum::<f64>() > 0.0);
    assert!(positive >= 90, "{positive}/100");
}

#[test]
fn null_selection_gives_no_systematic_gap() {
    let mut spec = PopulationSpec::reference();
    spec.selection = SelectionModel::default();
    let pop = gen_population(&spec, 4).unwrap();
    let gaps: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let s = draw_sample(&pop, &SampleDesign::reference(), seed).unwrap();
            unweighted_mean(&s, "y").unwrap().point - weighted_mean(&s, "y").unwrap().point
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (gaps.len() - 1) as f64).sqrt();
    assert!(mean.abs() < 4.0 * sd / (gaps.len() as f64).sqrt(), "mean gap {mean}, sd {sd}");
}
