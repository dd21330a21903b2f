//! TOML run configuration and command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use svyml::calibrate::TargetScale;
use svyml::cv::FoldDealing;
use svyml::estimate::{CriticalValue, ProportionInterval};
use svyml::metrics::ResampleUnit;
use svyml::model::BoostParams;
use svyml::replicate::ReplicateInterval;
use svyml::LonelyPsuPolicy;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every stochastic step; required by evaluate, cv and synth-validate.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    /// Key column shared by all inputs when more than one is given.
    #[serde(default)]
    pub merge_key: Option<String>,
    #[serde(default, rename = "input")]
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub design: Option<DesignSpec>,
    #[serde(default)]
    pub missing: MissingSpec,
    #[serde(default, rename = "derive")]
    pub derives: Vec<Derive>,
    #[serde(default, rename = "filter")]
    pub filters: Vec<Filter>,
    #[serde(default)]
    pub describe: Option<DescribeConfig>,
    #[serde(default)]
    pub evaluate: Option<EvaluateConfig>,
    #[serde(default)]
    pub cv: Option<CvConfig>,
    #[serde(default)]
    pub calibrate: Option<CalibrateConfig>,
    #[serde(default)]
    pub synth_validate: Option<SynthConfig>,
    /// Directory that relative paths in the file resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// `report.json` plus curve and fold CSVs.
    #[default]
    Json,
    /// As `json`, plus one CSV per report table.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    /// How this file joins the inputs before it (ignored for the first).
    #[serde(default)]
    pub join: Join,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Join {
    #[default]
    Inner,
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub weight: String,
    pub strata: String,
    pub psu: String,
    #[serde(default)]
    pub lonely_psu: LonelyPsuPolicy,
}

/// Numeric codes recoded to missing. Nothing is recoded unless listed here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSpec {
    #[serde(default)]
    pub codes: Vec<f64>,
    #[serde(default)]
    pub columns: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "present")]
    Present,
    #[serde(rename = "missing")]
    Missing,
}

/// A test on one column. Comparisons with a missing value are false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub column: String,
    pub op: Op,
    #[serde(default)]
    pub value: Option<f64>,
}

impl Condition {
    pub fn check(&self) -> Result<()> {
        let needs_value = !matches!(self.op, Op::Present | Op::Missing);
        if needs_value && self.value.is_none() {
            bail!("condition on '{}' needs a `value`", self.column);
        }
        Ok(())
    }

    /// `None` when the comparison cannot be made (missing value).
    pub fn eval(&self, x: Option<f64>) -> Option<bool> {
        match self.op {
            Op::Present => return Some(x.is_some()),
            Op::Missing => return Some(x.is_none()),
            _ => {}
        }
        let (x, v) = (x?, self.value?);
        Some(match self.op {
            Op::Lt => x < v,
            Op::Le => x <= v,
            Op::Gt => x > v,
            Op::Ge => x >= v,
            Op::Eq => x == v,
            Op::Ne => x != v,
            Op::Present | Op::Missing => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterScope {
    /// Drop failing rows before the design is built.
    #[default]
    Rows,
    /// Keep the rows for variance estimation but restrict estimation to
    /// passing rows (subpopulation analysis).
    Domain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filter {
    pub column: String,
    pub op: Op,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub scope: FilterScope,
}

impl Filter {
    pub fn condition(&self) -> Condition {
        Condition {
            column: self.column.clone(),
            op: self.op,
            value: self.value,
        }
    }
}

/// Derived columns, computed in order after merging and missing-code recoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Derive {
    /// Maps listed source values to new values; anything else is missing.
    Recode {
        name: String,
        source: String,
        map: BTreeMap<String, f64>,
    },
    /// Mean of the observed sources; missing when fewer than `min_present`.
    RowMean {
        name: String,
        sources: Vec<String>,
        #[serde(default = "one")]
        min_present: usize,
    },
    /// 1 when any rule holds, 0 when every rule is evaluable and false,
    /// missing otherwise.
    AnyOf { name: String, rules: Vec<Condition> },
    /// Level `i` (1-based) for `edges[i-1] <= x < edges[i]`; the last bin is
    /// open above and values below the first edge are missing.
    Bins {
        name: String,
        source: String,
        edges: Vec<f64>,
    },
}

fn one() -> usize {
    1
}

impl Derive {
    pub fn name(&self) -> &str {
        match self {
            Derive::Recode { name, .. }
            | Derive::RowMean { name, .. }
            | Derive::AnyOf { name, .. }
            | Derive::Bins { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledColumn {
    pub column: String,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSpec {
    pub column: String,
    #[serde(default)]
    pub label: Option<String>,
    /// Display names keyed by level code.
    #[serde(default)]
    pub levels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeConfig {
    #[serde(default)]
    pub means: Vec<LabeledColumn>,
    #[serde(default)]
    pub proportions: Vec<LabeledColumn>,
    #[serde(default)]
    pub compositions: Vec<CompositionSpec>,
    #[serde(default)]
    pub critical: CriticalValue,
    #[serde(default)]
    pub proportion_interval: ProportionInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logit,
    Boost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub rounds: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub min_child_weight: Option<f64>,
    #[serde(default)]
    pub subsample: Option<f64>,
}

impl ModelSpec {
    pub fn boost_params(&self) -> BoostParams {
        let d = BoostParams::default();
        BoostParams {
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            rounds: self.rounds.unwrap_or(d.rounds),
            lambda: self.lambda.unwrap_or(d.lambda),
            min_child_weight: self.min_child_weight.unwrap_or(d.min_child_weight),
            subsample: self.subsample.unwrap_or(d.subsample),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedModel {
    pub name: String,
    /// Train with design weights.
    #[serde(default)]
    pub weighted: bool,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub label: String,
    /// Reported difference is `a - b`.
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub outcome: String,
    pub features: Vec<String>,
    #[serde(rename = "model")]
    pub models: Vec<EvaluatedModel>,
    #[serde(default, rename = "compare")]
    pub comparisons: Vec<Comparison>,
    /// Bootstrap replicates for the intervals that are not DeLong.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default)]
    pub resample: ResampleUnit,
    #[serde(default = "percentile")]
    pub interval: ReplicateInterval,
    #[serde(default = "yes")]
    pub curves: bool,
}

fn default_bootstrap() -> usize {
    100
}

fn percentile() -> ReplicateInterval {
    ReplicateInterval::Percentile
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Random,
    Psu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Unweighted,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Auroc,
    Auprc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    pub outcome: String,
    pub features: Vec<String>,
    pub model: ModelSpec,
    pub k: usize,
    pub repeats: usize,
    #[serde(default = "both_schemes")]
    pub schemes: Vec<SchemeName>,
    #[serde(default = "both_weightings")]
    pub training: Vec<Weighting>,
    #[serde(default = "both_weightings")]
    pub evaluation: Vec<Weighting>,
    #[serde(default = "both_metrics")]
    pub metrics: Vec<MetricName>,
    #[serde(default)]
    pub min_test_n: Option<usize>,
    #[serde(default)]
    pub min_test_pos: Option<usize>,
    #[serde(default)]
    pub dealing: FoldDealing,
}

fn both_schemes() -> Vec<SchemeName> {
    vec![SchemeName::Random, SchemeName::Psu]
}

fn both_weightings() -> Vec<Weighting> {
    vec![Weighting::Unweighted, Weighting::Weighted]
}

fn both_metrics() -> Vec<MetricName> {
    vec![MetricName::Auroc, MetricName::Auprc]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Poststratify,
    Rake,
    Trim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub method: CalibrationMethod,
    /// CSV with columns `variable,level,target` (poststratify and rake).
    #[serde(default)]
    pub targets: Option<PathBuf>,
    #[serde(default)]
    pub scale: TargetScale,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    /// Trim cap as a weight quantile in (0.5, 1).
    #[serde(default)]
    pub cap_quantile: Option<f64>,
    /// Trim cap as an absolute weight.
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default = "yes")]
    pub redistribute: bool,
    /// Weighted means reported before and after adjustment.
    #[serde(default)]
    pub means: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub population_seed: Option<u64>,
    #[serde(default)]
    pub gamma_x: Option<f64>,
    #[serde(default)]
    pub gamma_y: Option<f64>,
    #[serde(default)]
    pub psus_per_stratum: Option<usize>,
    #[serde(default)]
    pub units_per_psu: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            draws: default_draws(),
            population_seed: None,
            gamma_x: None,
            gamma_y: None,
            psus_per_stratum: None,
            units_per_psu: None,
        }
    }
}

fn default_draws() -> usize {
    1000
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub inputs: Vec<PathBuf>,
    pub weight: Option<String>,
    pub strata: Option<String>,
    pub psu: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).context("invalid configuration")?;
        config.base_dir = base_dir.to_path_buf();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).with_context(|| format!("in {}", path.display()))
    }

    /// Applies command-line flags. Flag paths are taken as given (relative to
    /// the working directory), so they are made absolute here.
    pub fn apply(&mut self, o: Overrides) -> Result<()> {
        let cwd = std::env::current_dir().context("cannot read working directory")?;
        if !o.inputs.is_empty() {
            self.inputs = o
                .inputs
                .into_iter()
                .map(|p| InputSpec {
                    path: cwd.join(p),
                    join: Join::Inner,
                })
                .collect();
        }
        if o.weight.is_some() || o.strata.is_some() || o.psu.is_some() {
            let current = self.design.clone();
            let pick = |flag: Option<String>, file: Option<&String>, what: &str| -> Result<String> {
                flag.or_else(|| file.cloned())
                    .with_context(|| format!("design {what} column not set (use --{what} or [design])"))
            };
            self.design = Some(DesignSpec {
                weight: pick(o.weight, current.as_ref().map(|d| &d.weight), "weight")?,
                strata: pick(o.strata, current.as_ref().map(|d| &d.strata), "strata")?,
                psu: pick(o.psu, current.as_ref().map(|d| &d.psu), "psu")?,
                lonely_psu: current.map(|d| d.lonely_psu).unwrap_or_default(),
            });
        }
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        if let Some(out) = o.out {
            self.output_dir = Some(cwd.join(out));
        }
        if let Some(format) = o.format {
            self.format = format;
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .with_context(|| format!("`{command}` is stochastic and needs a seed (set `seed` or pass --seed)"))
    }

    pub fn require_design(&self) -> Result<&DesignSpec> {
        self.design
            .as_ref()
            .context("no design columns configured (add [design] or pass --weight/--strata/--psu)")
    }

    /// Configuration as echoed into the report.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.filters {
            f.condition().check()?;
        }
        for d in &self.derives {
            match d {
                Derive::AnyOf { rules, .. } => {
                    for r in rules {
                        r.check()?;
                    }
                }
                Derive::Bins { name, edges, .. } => {
                    if edges.is_empty() || edges.windows(2).any(|e| e[0] >= e[1]) {
                        bail!("derive '{name}': bin edges must be non-empty and increasing");
                    }
                }
                Derive::RowMean { name, sources, .. } if sources.is_empty() => {
                    bail!("derive '{name}': row_mean needs at least one source");
                }
                _ => {}
            }
        }
        Ok(())
    }
}
