//! Monte Carlo checks of the estimators against a synthetic census.

use anyhow::{bail, Result};
use rayon::prelude::*;
use svyml::estimate::{unweighted_mean, weighted_mean};
use svyml::stats;
use svyml::synth::{
    census_value, draw_sample, gen_population, CensusStatistic, PopulationSpec, PsuTake, SampleDesign, UnitTake, UnitVar,
    REFERENCE_POPULATION_SEED,
};

use crate::config::RunConfig;
use crate::report::{int, num, text, Report, Table};

struct Draw {
    weighted: f64,
    se: f64,
    ci: (f64, f64),
    unweighted: f64,
    n: usize,
}

pub fn synth_validate(config: &RunConfig) -> Result<Report> {
    let spec = config.synth_validate.clone().unwrap_or_default();
    let seed = config.require_seed("synth-validate")?;
    if spec.draws < 2 {
        bail!("[synth_validate] draws must be at least 2");
    }
    let mut pop_spec = PopulationSpec::reference();
    if let Some(g) = spec.gamma_x {
        pop_spec.selection.gamma_x = g;
    }
    if let Some(g) = spec.gamma_y {
        pop_spec.selection.gamma_y = g;
    }
    let population_seed = spec.population_seed.unwrap_or(REFERENCE_POPULATION_SEED);
    let pop = gen_population(&pop_spec, population_seed)?;
    let design = SampleDesign {
        psus: PsuTake::Uniform(spec.psus_per_stratum.unwrap_or(6)),
        units: UnitTake::Expected(spec.units_per_psu.unwrap_or(10.0)),
    };
    let truth = census_value(&pop, &CensusStatistic::Mean(UnitVar::Y))?;

    let draws = (0..spec.draws as u64)
        .into_par_iter()
        .map(|d| -> Result<Draw> {
            let s = draw_sample(&pop, &design, seed.wrapping_add(d))?;
            let w = weighted_mean(&s, "y")?;
            let u = unweighted_mean(&s, "y")?;
            Ok(Draw {
                weighted: w.point,
                se: w.se,
                ci: w.ci95,
                unweighted: u.point,
                n: s.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = Report::new("synth-validate", config);
    let count = draws.len() as f64;
    let share = |f: &dyn Fn(&Draw) -> bool| draws.iter().filter(|d| f(d)).count() as f64 / count;
    let coverage = share(&|d| d.ci.0 <= truth && truth <= d.ci.1);
    let within = share(&|d| (d.weighted - truth).abs() < 3.0 * d.se);
    let gaps: Vec<f64> = draws.iter().map(|d| d.unweighted - d.weighted).collect();
    let mean_gap = stats::mean(&gaps);
    let gap_se = stats::sample_sd(&gaps) / count.sqrt();
    let weighted_mean_est = stats::mean(&draws.iter().map(|d| d.weighted).collect::<Vec<_>>());
    let unweighted_mean_est = stats::mean(&draws.iter().map(|d| d.unweighted).collect::<Vec<_>>());

    let mut census = Table::new("census", &["quantity", "value"]);
    census.push(vec![text("population_seed"), int(population_seed as usize)]);
    census.push(vec![text("population_size"), int(pop.size())]);
    census.push(vec![text("census_mean_y"), num(truth)]);
    census.push(vec![text("gamma_x"), num(pop_spec.selection.gamma_x)]);
    census.push(vec![text("gamma_y"), num(pop_spec.selection.gamma_y)]);
    census.push(vec![text("mean_sample_size"), num(stats::mean(&draws.iter().map(|d| d.n as f64).collect::<Vec<_>>()))]);
    report.tables.push(census);

    let mut summary = Table::new("summary", &["quantity", "value"]);
    summary.push(vec![text("draws"), int(draws.len())]);
    summary.push(vec![text("coverage_95"), num(coverage)]);
    summary.push(vec![text("within_3se"), num(within)]);
    summary.push(vec![text("weighted_bias"), num(weighted_mean_est - truth)]);
    summary.push(vec![text("unweighted_bias"), num(unweighted_mean_est - truth)]);
    summary.push(vec![text("mean_gap"), num(mean_gap)]);
    summary.push(vec![text("mean_gap_se"), num(gap_se)]);
    report.tables.push(summary);

    report.check(
        "consistency",
        within >= 0.95,
        format!("{:.1}% of draws within 3 SE of the census value (need >= 95%)", 100.0 * within),
    );
    report.check(
        "coverage",
        (0.93..=0.97).contains(&coverage),
        format!("Taylor 95% intervals cover the census value in {:.1}% of draws (need 93-97%)", 100.0 * coverage),
    );
    let informative = pop_spec.selection.gamma_x != 0.0 || pop_spec.selection.gamma_y != 0.0;
    if informative {
        let worse = share(&|d| (d.unweighted - truth).abs() > (d.weighted - truth).abs());
        report.check(
            "bias_direction",
            worse >= 0.9,
            format!("unweighted mean further from the census value in {:.1}% of draws (need >= 90%)", 100.0 * worse),
        );
    } else {
        report.check(
            "null_gap",
            mean_gap.abs() < 4.0 * gap_se,
            format!("mean unweighted - weighted gap {mean_gap:.5} (4 SE = {:.5})", 4.0 * gap_se),
        );
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["draw", "seed", "n", "weighted", "se", "ci_low", "ci_high", "unweighted"])?;
    for (i, d) in draws.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            seed.wrapping_add(i as u64).to_string(),
            d.n.to_string(),
            d.weighted.to_string(),
            d.se.to_string(),
            d.ci.0.to_string(),
            d.ci.1.to_string(),
            d.unweighted.to_string(),
        ])?;
    }
    report.attach("draws", "synth_draws.csv", w.into_inner()?);
    Ok(report)
}
