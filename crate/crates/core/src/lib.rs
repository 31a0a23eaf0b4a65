//! Deterministic simulation of federated wireless traffic prediction under
//! model poisoning attacks: local training, attack crafting, robust
//! aggregation, and experiment orchestration.

pub mod aggregate;
pub mod attacks;
pub mod config;
pub mod data;
pub mod error;
pub mod glid;
pub mod metrics;
pub mod model;
pub mod params;
pub mod sim;
pub mod svm;

pub use aggregate::{aggregate, AggContext, AggState, AggregationOutcome, Rule, Submission};
pub use config::{AggregatorSpec, DataSpec, ExperimentConfig, FleetSpec, ModelSpec, TrainSpec};
pub use error::{Error, Result};
pub use glid::{GlidConfig, GlidEstimator};
pub use metrics::{cap_metric, DetectionReport, RoundRecord};
pub use model::{Activation, ModelArch, TrainConfig};
pub use params::ParamVector;
pub use sim::{run_experiment, AttackSpec, ExperimentResult, FleetConfig, Seeds};
