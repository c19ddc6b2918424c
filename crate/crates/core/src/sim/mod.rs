//! Deterministic discrete-event simulator: configuration, scenarios,
//! workload generation, the run loop and metrics.

pub mod compare;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod scenario;
pub mod workload;

pub use compare::{measure_modes, run_attack, run_attack_matrix, standard_matrix, ModeComparison};
pub use config::{Calibration, ConfigError, CostModel, Mode, SimConfig};
pub use engine::{run_scenario, CaseDecision, Payload, RunOutput, SimError, Simulation};
pub use metrics::{emit_metrics, metrics_csv, summarize, Metric, MetricsRecord, SummaryRow};
pub use scenario::{builtin, Scenario, ScenarioError};
pub use workload::{generate_workload, pet_arrivals, workload_stats, WorkloadEvent, WorkloadKind, WorkloadStats};
