//! Experiment runner: single runs, attack x aggregator matrices, and
//! parameter sweeps, all driven by one TOML config file.

use clap::{Args, Parser, Subcommand};
use fedwtp_core::attacks::{BaselineAttackConfig, FtiConfig};
use fedwtp_core::config::RULE_NAMES;
use fedwtp_core::metrics::{persist_run, summary_table, CellOutcome, ATTACK_COLUMNS};
use fedwtp_core::{
    run_experiment, AggregatorSpec, AttackSpec, Error, ExperimentConfig, GlidEstimator,
};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "fedwtp", version, about = "Federated traffic-prediction experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the experiment config (TOML)
    config: PathBuf,
    /// Dump the fully resolved config as JSON and exit
    #[arg(long)]
    print_config: bool,
    /// Output directory (overrides the config's out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override every seed field with one value
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment and persist its artifacts
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run the Cartesian product of aggregators x attacks and print a table
    Matrix {
        #[command(flatten)]
        common: Common,
        /// Comma-separated aggregator names
        #[arg(long, value_delimiter = ',', required = true)]
        aggregators: Vec<String>,
        /// Comma-separated attack names (include "none" for the baseline)
        #[arg(long, value_delimiter = ',', required = true)]
        attacks: Vec<String>,
    },
    /// Run one experiment per parameter value and emit a sweep CSV
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of: fake_pct, eta0, fleet_size, percentile_pair, estimator
        #[arg(long)]
        param: String,
        /// Comma-separated values; percentile_pair values use lo:hi
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

/// Errors raised before any computation: bad config, bad names, bad values.
struct ValidationError(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { common } => cmd_run(common),
        Command::Matrix {
            common,
            aggregators,
            attacks,
        } => cmd_matrix(common, aggregators, attacks),
        Command::Sweep {
            common,
            param,
            values,
        } => cmd_sweep(common, param, values),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("validation error:\n{msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        CliError::Validation(e.0)
    }
}

/// Load, apply overrides, and validate; every failure here is exit 1.
fn load_config(common: &Common) -> Result<ExperimentConfig, ValidationError> {
    let mut cfg = ExperimentConfig::from_path(&common.config)
        .map_err(|e| ValidationError(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.set_all_seeds(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate().map_err(|e| ValidationError(e.to_string()))?;
    Ok(cfg)
}

fn print_resolved(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let json = cfg
        .to_resolved_json()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    print!("{json}");
    Ok(())
}

/// Run one experiment and persist it under `out_dir`. Returns the final
/// capped metrics.
fn execute(cfg: &ExperimentConfig, out_dir: &std::path::Path) -> Result<CellOutcome, Error> {
    let result = run_experiment(cfg)?;
    let json = cfg.to_resolved_json()?;
    persist_run(&result.records, result.detection.as_ref(), &json, out_dir)?;
    let last = result
        .final_record()
        .ok_or_else(|| Error::Config("experiment produced no rounds".into()))?;
    Ok(CellOutcome::Metrics {
        mae_capped: last.mae_capped,
        mse_capped: last.mse_capped,
    })
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn cmd_run(common: Common) -> Result<(), CliError> {
    let cfg = load_config(&common)?;
    if common.print_config {
        return print_resolved(&cfg);
    }
    let out_dir = cfg.out_dir.clone().unwrap_or_else(default_out);
    match execute(&cfg, &out_dir) {
        Ok(CellOutcome::Metrics {
            mae_capped,
            mse_capped,
        }) => {
            println!(
                "run complete: attack={} aggregator={} mae={mae_capped:.6} mse={mse_capped:.6}",
                cfg.attack.label(),
                cfg.aggregator.name
            );
            println!("artifacts written to {}", out_dir.display());
            Ok(())
        }
        Ok(CellOutcome::Failed) => unreachable!("execute never returns Failed"),
        Err(e) => Err(CliError::Runtime(e.to_string())),
    }
}

/// Attack spec for a column name, reusing the config's knobs when the
/// config already selects that attack.
fn attack_named(name: &str, base: &AttackSpec) -> Option<AttackSpec> {
    if base.label() == name {
        return Some(base.clone());
    }
    match name {
        "none" => Some(AttackSpec::None),
        "fti" => Some(AttackSpec::Fti(FtiConfig::default())),
        "trim" => Some(AttackSpec::Trim(BaselineAttackConfig::default())),
        "history" => Some(AttackSpec::History(BaselineAttackConfig::default())),
        "random" => Some(AttackSpec::Random(BaselineAttackConfig::default())),
        "mpaf" => Some(AttackSpec::Mpaf(BaselineAttackConfig::default())),
        "zheng" => Some(AttackSpec::Zheng(BaselineAttackConfig::default())),
        _ => None,
    }
}

fn cmd_matrix(
    common: Common,
    aggregators: Vec<String>,
    attacks: Vec<String>,
) -> Result<(), CliError> {
    let cfg = load_config(&common)?;

    // name checks collect every problem before any run starts
    let mut problems = Vec::new();
    for a in &aggregators {
        if !RULE_NAMES.contains(&a.as_str()) {
            problems.push(format!(
                "unknown aggregator: {a} (expected one of {})",
                RULE_NAMES.join(", ")
            ));
        }
    }
    for a in &attacks {
        if !ATTACK_COLUMNS.contains(&a.as_str()) {
            problems.push(format!(
                "unknown attack: {a} (expected one of {})",
                ATTACK_COLUMNS.join(", ")
            ));
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }
    if common.print_config {
        return print_resolved(&cfg);
    }

    let out_root = cfg.out_dir.clone().unwrap_or_else(default_out);
    let mut cells: BTreeMap<(String, String), CellOutcome> = BTreeMap::new();
    for rule in &aggregators {
        for attack in &attacks {
            let mut cell_cfg = cfg.clone();
            cell_cfg.aggregator = AggregatorSpec {
                name: rule.clone(),
                ..cfg.aggregator.clone()
            };
            cell_cfg.attack = attack_named(attack, &cfg.attack).expect("names checked above");
            let cell_dir = out_root.join(format!("{rule}_{attack}"));
            let outcome = match execute(&cell_cfg, &cell_dir) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("cell {rule} x {attack} failed: {e}");
                    CellOutcome::Failed
                }
            };
            cells.insert((rule.clone(), attack.clone()), outcome);
        }
    }

    let (text, csv) = summary_table(&aggregators, &cells);
    print!("{text}");
    std::fs::create_dir_all(&out_root)
        .and_then(|_| std::fs::write(out_root.join("summary.csv"), &csv))
        .and_then(|_| std::fs::write(out_root.join("summary.txt"), &text))
        .map_err(|e| CliError::Runtime(format!("writing summary: {e}")))?;
    Ok(())
}

/// Apply one sweep value to a config clone. Value parsing failures are
/// validation errors.
fn apply_sweep_value(
    cfg: &mut ExperimentConfig,
    param: &str,
    value: &str,
) -> Result<(), ValidationError> {
    let bad = |msg: String| Err(ValidationError(msg));
    match param {
        "fake_pct" => match value.parse::<f64>() {
            Ok(v) => {
                cfg.fleet.adversarial_pct = v;
                Ok(())
            }
            Err(_) => bad(format!("fake_pct value not a number: {value}")),
        },
        "eta0" => match value.parse::<f64>() {
            Ok(v) => {
                let mut fti = match &cfg.attack {
                    AttackSpec::Fti(f) => f.clone(),
                    _ => FtiConfig::default(),
                };
                fti.eta0 = v;
                cfg.attack = AttackSpec::Fti(fti);
                Ok(())
            }
            Err(_) => bad(format!("eta0 value not a number: {value}")),
        },
        "fleet_size" => match value.parse::<usize>() {
            Ok(v) => {
                cfg.fleet.fleet_size = v;
                Ok(())
            }
            Err(_) => bad(format!("fleet_size value not an integer: {value}")),
        },
        "percentile_pair" => {
            let parts: Vec<&str> = value.split(':').collect();
            let pair = match parts.as_slice() {
                [lo, hi] => lo
                    .parse::<f64>()
                    .and_then(|l| hi.parse::<f64>().map(|h| (l, h)))
                    .ok(),
                _ => None,
            };
            match pair {
                Some(p) => {
                    cfg.aggregator.name = "glid".to_string();
                    cfg.aggregator.glid.fixed_pair = Some(p);
                    Ok(())
                }
                None => bad(format!("percentile_pair value must be lo:hi, got {value}")),
            }
        }
        "estimator" => {
            let estimator = match value {
                "sd" => GlidEstimator::Sd { k: 3.0 },
                "iqr" => GlidEstimator::Iqr { k_iqr: 1.5 },
                "z_score" => GlidEstimator::ZScore { k_z: 2.0 },
                "one_class_svm" => GlidEstimator::OneClassSvm {
                    nu: 0.2,
                    bandwidth: None,
                },
                _ => {
                    return bad(format!(
                        "unknown estimator: {value} (expected sd, iqr, z_score, one_class_svm)"
                    ))
                }
            };
            cfg.aggregator.name = "glid".to_string();
            cfg.aggregator.glid.fixed_pair = None;
            cfg.aggregator.glid.estimator = estimator;
            Ok(())
        }
        _ => bad(format!(
            "unknown sweep parameter: {param} (expected fake_pct, eta0, fleet_size, \
             percentile_pair, estimator)"
        )),
    }
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn cmd_sweep(common: Common, param: String, values: Vec<String>) -> Result<(), CliError> {
    let cfg = load_config(&common)?;

    // parse every value up front so a bad one aborts before any run
    let mut configs = Vec::new();
    let mut problems = Vec::new();
    for value in &values {
        let mut cell_cfg = cfg.clone();
        match apply_sweep_value(&mut cell_cfg, &param, value) {
            Ok(()) => match cell_cfg.validate() {
                Ok(()) => configs.push((value.clone(), cell_cfg)),
                Err(e) => problems.push(format!("value {value}: {e}")),
            },
            Err(e) => problems.push(e.0),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }
    if common.print_config {
        return print_resolved(&cfg);
    }

    let out_root = cfg.out_dir.clone().unwrap_or_else(default_out);
    let mut csv = String::from("value,attack,mae_capped,mse_capped\n");
    for (value, cell_cfg) in &configs {
        let attack = cell_cfg.attack.label();
        let cell_dir = out_root.join(format!("{param}_{}_{attack}", sanitize(value)));
        match execute(cell_cfg, &cell_dir) {
            Ok(CellOutcome::Metrics {
                mae_capped,
                mse_capped,
            }) => {
                csv.push_str(&format!("{value},{attack},{mae_capped},{mse_capped}\n"));
            }
            Ok(CellOutcome::Failed) => unreachable!("execute never returns Failed"),
            Err(e) => return Err(CliError::Runtime(format!("value {value}: {e}"))),
        }
    }

    print!("{csv}");
    std::fs::create_dir_all(&out_root)
        .and_then(|_| std::fs::write(out_root.join("sweep.csv"), &csv))
        .map_err(|e| CliError::Runtime(format!("writing sweep.csv: {e}")))?;
    Ok(())
}
