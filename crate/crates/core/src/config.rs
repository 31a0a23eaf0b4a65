//! Experiment configuration: one structured file determines every output
//! byte. Every field has a default so an empty config runs.

use crate::aggregate::Rule;
use crate::data::{generate_synthetic, load_grid_csv, TrafficSeries, WindowConfig};
use crate::error::{Error, Result};
use crate::glid::GlidConfig;
use crate::model::{Activation, TrainConfig};
use crate::sim::{AttackSpec, FleetConfig, Seeds};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Data source: synthetic diurnal series or a traffic grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic {
        #[serde(default = "default_series_length")]
        length: usize,
        #[serde(default = "default_period")]
        period: usize,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    Csv {
        path: PathBuf,
        /// Cell ids to select; must be nonempty.
        #[serde(default)]
        cells: Vec<u64>,
        #[serde(default = "default_interval")]
        interval_minutes: u32,
        /// Value column indices to sum; `None` sums all columns after the
        /// timestamp.
        #[serde(default)]
        value_columns: Option<Vec<usize>>,
    },
}

fn default_series_length() -> usize {
    432
}
fn default_period() -> usize {
    144
}
fn default_noise_std() -> f64 {
    2.0
}
fn default_interval() -> u32 {
    10
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synthetic {
            length: default_series_length(),
            period: default_period(),
            noise_std: default_noise_std(),
        }
    }
}

impl DataSpec {
    /// Produce `count` series deterministically from the data seed.
    pub fn load(&self, count: usize, seed: u64) -> Result<Vec<TrafficSeries>> {
        match self {
            DataSpec::Synthetic {
                length,
                period,
                noise_std,
            } => generate_synthetic(count, *length, *period, *noise_std, seed),
            DataSpec::Csv {
                path,
                cells,
                interval_minutes,
                value_columns,
            } => {
                let series =
                    load_grid_csv(path, cells, *interval_minutes, value_columns.as_deref())?;
                if series.len() < count {
                    return Err(Error::Config(format!(
                        "csv source provides {} series, fleet needs {count}",
                        series.len()
                    )));
                }
                Ok(series.into_iter().take(count).collect())
            }
        }
    }
}

/// Fleet size and the adversarial share, resolved to counts at run time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    #[serde(default = "default_fleet_size")]
    pub fleet_size: usize,
    /// Percentage of the fleet that is fake or compromised.
    #[serde(default = "default_adversarial_pct")]
    pub adversarial_pct: f64,
}

fn default_fleet_size() -> usize {
    100
}
fn default_adversarial_pct() -> f64 {
    20.0
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec {
            fleet_size: default_fleet_size(),
            adversarial_pct: default_adversarial_pct(),
        }
    }
}

impl FleetSpec {
    pub fn resolve(&self) -> FleetConfig {
        let n_adversarial =
            ((self.fleet_size as f64) * self.adversarial_pct / 100.0).round() as usize;
        FleetConfig {
            n_benign: self.fleet_size.saturating_sub(n_adversarial),
            n_adversarial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![8]
}
fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden_dims: default_hidden(),
            activation: default_activation(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
}

fn default_learning_rate() -> f64 {
    0.001
}
fn default_batch_size() -> usize {
    64
}
fn default_local_epochs() -> usize {
    1
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            local_epochs: default_local_epochs(),
        }
    }
}

impl TrainSpec {
    /// Seed is a placeholder; the simulator derives one per (BS, round).
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            seed: 0,
        }
    }
}

/// Aggregation rule selection by name plus the knobs the named rule reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorSpec {
    #[serde(default = "default_rule_name")]
    pub name: String,
    #[serde(default = "default_trim_fraction")]
    pub trim_fraction: f64,
    /// Krum's f; defaults to the fleet's adversarial count.
    #[serde(default)]
    pub expected_malicious: Option<usize>,
    #[serde(default = "default_remove_fraction")]
    pub remove_fraction: f64,
    #[serde(default)]
    pub glid: GlidConfig,
}

fn default_rule_name() -> String {
    "glid".to_string()
}
fn default_trim_fraction() -> f64 {
    0.2
}
fn default_remove_fraction() -> f64 {
    0.2
}

pub const RULE_NAMES: [&str; 9] = [
    "mean",
    "median",
    "trimmed_mean",
    "krum",
    "foolsgold",
    "faba",
    "fltrust",
    "flair",
    "glid",
];

impl Default for AggregatorSpec {
    fn default() -> Self {
        AggregatorSpec {
            name: default_rule_name(),
            trim_fraction: default_trim_fraction(),
            expected_malicious: None,
            remove_fraction: default_remove_fraction(),
            glid: GlidConfig::default(),
        }
    }
}

impl AggregatorSpec {
    /// Default spec for a rule name; `None` for unknown names.
    pub fn named(name: &str) -> Option<Self> {
        RULE_NAMES.contains(&name).then(|| AggregatorSpec {
            name: name.to_string(),
            ..AggregatorSpec::default()
        })
    }

    pub fn resolve(&self, fleet: &FleetConfig) -> Rule {
        match self.name.as_str() {
            "mean" => Rule::Mean,
            "median" => Rule::Median,
            "trimmed_mean" => Rule::TrimmedMean {
                trim_fraction: self.trim_fraction,
            },
            "krum" => Rule::Krum {
                expected_malicious: self.expected_malicious.unwrap_or(fleet.n_adversarial),
            },
            "foolsgold" => Rule::FoolsGold,
            "faba" => Rule::Faba {
                remove_fraction: self.remove_fraction,
            },
            "fltrust" => Rule::FlTrust,
            "flair" => Rule::Flair,
            _ => Rule::Glid(self.glid.clone()),
        }
    }
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec::None
    }
}

fn default_rounds() -> usize {
    50
}
fn default_split() -> f64 {
    0.8
}

/// The complete, persistable description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub fleet: FleetSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub aggregator: AggregatorSpec,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rounds: default_rounds(),
            split: default_split(),
            data: DataSpec::default(),
            window: WindowConfig::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            fleet: FleetSpec::default(),
            attack: AttackSpec::default(),
            aggregator: AggregatorSpec::default(),
            seeds: Seeds::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Fully resolved config as JSON; persisting this makes a run
    /// reproducible from the output directory alone.
    pub fn to_resolved_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    /// CLI `--seed` override: one value replaces every seed field.
    pub fn set_all_seeds(&mut self, seed: u64) {
        self.seeds = Seeds {
            data: seed,
            init: seed,
            round: seed,
        };
    }

    /// Collects every violated field, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();

        if !(0.0..=50.0).contains(&self.fleet.adversarial_pct) {
            problems.push(format!(
                "fleet.adversarial_pct must lie in [0, 50], got {}",
                self.fleet.adversarial_pct
            ));
        }
        if self.fleet.fleet_size == 0 {
            problems.push("fleet.fleet_size must be >= 1".into());
        } else if self.fleet.resolve().n_benign == 0 {
            problems.push("fleet leaves no benign BS".into());
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            problems.push(format!("split must lie in (0, 1), got {}", self.split));
        }
        if let Err(e) = self.window.validate() {
            problems.push(format!("window: {e}"));
        }
        if self.train.learning_rate <= 0.0 || !self.train.learning_rate.is_finite() {
            problems.push(format!(
                "train.learning_rate must be positive, got {}",
                self.train.learning_rate
            ));
        }
        if self.train.batch_size == 0 {
            problems.push("train.batch_size must be >= 1".into());
        }
        if self.model.hidden_dims.iter().any(|&h| h == 0) {
            problems.push("model.hidden_dims entries must be >= 1".into());
        }
        match &self.data {
            DataSpec::Synthetic {
                length,
                period,
                noise_std,
            } => {
                if *period == 0 || *length < 2 * period {
                    problems.push(format!(
                        "data.length must be at least 2 * data.period, got {length} vs {period}"
                    ));
                }
                if *noise_std < 0.0 {
                    problems.push("data.noise_std must be >= 0".into());
                }
                if *length <= self.window.deepest_lag() + 2 {
                    problems.push(format!(
                        "data.length {length} too short for the window's deepest lag {}",
                        self.window.deepest_lag()
                    ));
                }
            }
            DataSpec::Csv { path, cells, .. } => {
                if !path.exists() {
                    problems.push(format!("data.path does not exist: {}", path.display()));
                }
                if cells.is_empty() {
                    problems.push("data.cells must select at least one cell".into());
                }
            }
        }
        if let Err(e) = self.attack.validate() {
            problems.push(format!("attack: {e}"));
        }
        if !RULE_NAMES.contains(&self.aggregator.name.as_str()) {
            problems.push(format!(
                "aggregator.name unknown: {} (expected one of {})",
                self.aggregator.name,
                RULE_NAMES.join(", ")
            ));
        }
        if !(0.0..0.5).contains(&self.aggregator.trim_fraction) {
            problems.push(format!(
                "aggregator.trim_fraction must lie in [0, 0.5), got {}",
                self.aggregator.trim_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.aggregator.remove_fraction) {
            problems.push(format!(
                "aggregator.remove_fraction must lie in [0, 1), got {}",
                self.aggregator.remove_fraction
            ));
        }
        if let Err(e) = self.aggregator.glid.validate() {
            problems.push(format!("aggregator.glid: {e}"));
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }
}
