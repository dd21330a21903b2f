use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use svyml_cli::config::{OutputFormat, Overrides, RunConfig};
use svyml_cli::{logging, run, Command};

#[derive(Parser)]
#[command(name = "svyml", version, about = "Survey-weighted estimation and model evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Weighted and unweighted descriptive estimates side by side.
    Describe(Common),
    /// Fit models and compare weighted and unweighted AUROC/AUPRC.
    Evaluate(Common),
    /// Random versus PSU-stratified cross-validation factorial.
    Cv(Common),
    /// Post-stratify, rake or trim the design weights.
    Calibrate(Common),
    /// Monte Carlo validation against a synthetic census.
    SynthValidate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Input file (CSV or .xpt); repeat to merge several. Replaces the configured inputs.
    #[arg(long = "input", short)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    weight: Option<String>,
    #[arg(long)]
    strata: Option<String>,
    #[arg(long)]
    psu: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default out/<command>).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

fn execute(command: Command, args: Common) -> Result<bool> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None if command == Command::SynthValidate => RunConfig::default(),
        None => anyhow::bail!("`{}` needs --config", command.name()),
    };
    config.apply(Overrides {
        inputs: args.inputs,
        weight: args.weight,
        strata: args.strata,
        psu: args.psu,
        seed: args.seed,
        out: args.out,
        format: args.format,
    })?;
    let mut report = run(command, &config)?;
    report.finish(logging::drain());
    let dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(command.name()));
    report.write(&dir, config.format)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    println!("report: {}", dir.join("report.json").display());
    Ok(report.is_ok())
}

fn main() -> ExitCode {
    logging::init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Describe(a) => (Command::Describe, a),
        Sub::Evaluate(a) => (Command::Evaluate, a),
        Sub::Cv(a) => (Command::Cv, a),
        Sub::Calibrate(a) => (Command::Calibrate, a),
        Sub::SynthValidate(a) => (Command::SynthValidate, a),
    };
    match execute(command, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
