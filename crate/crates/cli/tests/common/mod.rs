//! NHANES-shaped synthetic inputs: four XPT files keyed by SEQN with
//! strata, two PSUs per stratum, older adults oversampled, special missing
//! codes on the diabetes question and partly missing examination data.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svyml::ingest::{write_xpt, Column};
use svyml::RawTable;

pub const STRATA: usize = 12;
pub const PER_PSU: usize = 60;

#[derive(Debug, Clone)]
pub struct Person {
    pub seqn: f64,
    pub age: f64,
    pub race: f64,
    pub weight: f64,
    pub stratum: f64,
    pub psu: f64,
    pub bmi: Option<f64>,
    pub has_bmx: bool,
    pub sys: [Option<f64>; 3],
    pub dia: [Option<f64>; 3],
    pub diq: Option<f64>,
}

impl Person {
    pub fn adult(&self) -> bool {
        self.weight > 0.0 && self.age >= 20.0
    }

    pub fn diabetes(&self) -> Option<f64> {
        match self.diq? as i64 {
            1 => Some(1.0),
            2 | 3 => Some(0.0),
            _ => None,
        }
    }
}

pub fn people(seed: u64) -> Vec<Person> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let races = [1.0, 2.0, 3.0, 4.0, 6.0, 7.0];
    let mut out = Vec::new();
    for h in 0..STRATA {
        for p in 1..=2 {
            for _ in 0..PER_PSU {
                let seqn = 130_000.0 + out.len() as f64;
                let age: f64 = rng.random_range(12..=80) as f64;
                // Older adults are oversampled, so they carry smaller weights.
                let weight = if rng.random::<f64>() < 0.03 {
                    0.0
                } else {
                    (30_000.0 - 250.0 * age) * rng.random_range(0.7..1.3)
                };
                let bmi = (rng.random::<f64>() > 0.04).then(|| 22.0 + 0.08 * age + rng.random_range(-4.0..8.0));
                let risk = -7.0 + 0.06 * age + 0.08 * bmi.unwrap_or(28.0) + 0.3 * (h % 3) as f64;
                let diabetic = rng.random::<f64>() < 1.0 / (1.0 + (-risk).exp());
                let diq = match rng.random::<f64>() {
                    u if u < 0.02 => Some(9.0),
                    u if u < 0.03 => Some(7.0),
                    u if u < 0.05 => None,
                    _ if diabetic => Some(1.0),
                    u if u < 0.08 => Some(3.0),
                    _ => Some(2.0),
                };
                let base = 100.0 + 0.4 * age + rng.random_range(-10.0..25.0);
                let sys = std::array::from_fn(|_| (rng.random::<f64>() > 0.05).then(|| base + rng.random_range(-4.0..4.0)));
                let dia = std::array::from_fn(|_| (rng.random::<f64>() > 0.05).then(|| 0.5 * base + rng.random_range(0.0..20.0)));
                out.push(Person {
                    seqn,
                    age,
                    race: races[rng.random_range(0..races.len())],
                    weight,
                    stratum: 173.0 + h as f64,
                    psu: p as f64,
                    bmi,
                    has_bmx: rng.random::<f64>() > 0.02,
                    sys,
                    dia,
                    diq,
                });
            }
        }
    }
    out
}

fn col(name: &str, v: impl Iterator<Item = Option<f64>>) -> Column {
    Column::from_options(name, &v.collect::<Vec<_>>())
}

/// Writes DEMO_L, BMX_L, BPXO_L and DIQ_L; BMX_L omits some SEQNs so the
/// merge has to be a left join.
pub fn write_inputs(dir: &Path, people: &[Person]) -> Vec<PathBuf> {
    let demo = RawTable::new(
        "DEMO_L",
        vec![
            col("SEQN", people.iter().map(|p| Some(p.seqn))),
            col("RIDAGEYR", people.iter().map(|p| Some(p.age))),
            col("RIDRETH3", people.iter().map(|p| Some(p.race))),
            col("WTMEC2YR", people.iter().map(|p| Some(p.weight))),
            col("SDMVSTRA", people.iter().map(|p| Some(p.stratum))),
            col("SDMVPSU", people.iter().map(|p| Some(p.psu))),
            col("EQW", people.iter().map(|_| Some(1.0))),
        ],
    )
    .unwrap();
    let with_bmx: Vec<&Person> = people.iter().filter(|p| p.has_bmx).collect();
    let bmx = RawTable::new(
        "BMX_L",
        vec![
            col("SEQN", with_bmx.iter().map(|p| Some(p.seqn))),
            col("BMXBMI", with_bmx.iter().map(|p| p.bmi)),
        ],
    )
    .unwrap();
    let mut bp = vec![col("SEQN", people.iter().map(|p| Some(p.seqn)))];
    for i in 0..3 {
        bp.push(col(&format!("BPXOSY{}", i + 1), people.iter().map(|p| p.sys[i])));
    }
    for i in 0..3 {
        bp.push(col(&format!("BPXODI{}", i + 1), people.iter().map(|p| p.dia[i])));
    }
    let bpxo = RawTable::new("BPXO_L", bp).unwrap();
    let diq = RawTable::new(
        "DIQ_L",
        vec![
            col("SEQN", people.iter().map(|p| Some(p.seqn))),
            col("DIQ010", people.iter().map(|p| p.diq)),
        ],
    )
    .unwrap();
    let mut paths = Vec::new();
    for t in [demo, bmx, bpxo, diq] {
        let path = dir.join(format!("{}.xpt", t.name()));
        write_xpt(&t, &path).unwrap();
        paths.push(path);
    }
    paths
}

/// The shipped NHANES configuration with its inputs pointed at `dir`.
pub fn nhanes_config(dir: &Path) -> String {
    let shipped = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/nhanes_2021_2023.toml")).unwrap();
    shipped.replace("../data/nhanes/", &format!("{}/", dir.display()))
}

pub fn svyml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svyml")).args(args).output().unwrap()
}

pub fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// Looks up `column` in the first row of `table` whose `key` column equals `value`.
pub fn cell(report: &serde_json::Value, table: &str, key: &str, value: &str, column: &str) -> serde_json::Value {
    let t = report["tables"].as_array().unwrap().iter().find(|t| t["name"] == table).unwrap_or_else(|| panic!("no table {table}"));
    let idx = |name: &str| t["columns"].as_array().unwrap().iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    let (k, c) = (idx(key), idx(column));
    t["rows"].as_array().unwrap().iter().find(|r| r[k] == value).unwrap_or_else(|| panic!("no row {key}={value}"))[c].clone()
}

pub fn rows<'a>(report: &'a serde_json::Value, table: &str) -> &'a Vec<serde_json::Value> {
    report["tables"].as_array().unwrap().iter().find(|t| t["name"] == table).unwrap()["rows"].as_array().unwrap()
}
